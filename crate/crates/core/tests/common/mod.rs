#![allow(dead_code)]

use faithful_mech::{
    AllocationProblem, ConsensusProblem, Interval, QuadraticCost, TreeGraph, TypeSpaceBounds,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn target(t: f64) -> QuadraticCost<f64> {
    QuadraticCost::squared_distance(1.0, &[t])
}

/// Two followers with `(z − 1)²` sharing one unit of bandwidth.
pub fn bandwidth() -> AllocationProblem<f64> {
    AllocationProblem::new(
        vec![target(1.0), target(1.0)],
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        DVector::from_element(1, 1.0),
    )
    .unwrap()
}

/// `(z − 1)²` and `(z − 2)²` with `z₁ = z₂`.
pub fn example1() -> AllocationProblem<f64> {
    AllocationProblem::new(
        vec![target(1.0), target(2.0)],
        DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
        DVector::zeros(1),
    )
    .unwrap()
}

pub fn boxes(n: usize, lo: f64, hi: f64) -> TypeSpaceBounds<f64> {
    TypeSpaceBounds::scalar(vec![Interval::new(lo, hi).unwrap(); n]).unwrap()
}

pub fn twonode() -> ConsensusProblem<f64> {
    ConsensusProblem::new(TreeGraph::path(2).unwrap(), vec![0.0, 2.0], boxes(2, 0.0, 2.0)).unwrap()
}

pub fn path3() -> ConsensusProblem<f64> {
    ConsensusProblem::new(TreeGraph::path(3).unwrap(), vec![0.0, 0.0, 3.0], boxes(3, 0.0, 3.0)).unwrap()
}

pub fn scalar(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// SPD matrix with spectrum in `[0.5, 2]`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let u = uniform_matrix(rng, d, d).qr().q();
    let e = DVector::from_fn(d, |_, _| rng.random_range(0.5..2.0));
    &u * DMatrix::from_diagonal(&e) * u.transpose()
}

fn condition_sq(r: &DMatrix<f64>) -> f64 {
    let s = r.singular_values();
    let (lo, hi) = (s.min(), s.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).powi(2)
    }
}

/// Random strictly convex problem: `N ≤ 4` followers, blocks of dimension
/// `≤ 3`, `m ≤ 2` rows, `cond(RRᵀ) ≤ 20`. Every marginal society keeps
/// full row rank.
pub fn random_problem(rng: &mut ChaCha8Rng) -> AllocationProblem<f64> {
    loop {
        let n = rng.random_range(2..=4);
        let dims: Vec<usize> = (0..n).map(|_| rng.random_range(1..=3)).collect();
        let total: usize = dims.iter().sum();
        let m = rng.random_range(1..=2usize);
        let r = uniform_matrix(rng, m, total);
        if condition_sq(&r) > 20.0 {
            continue;
        }
        let mut ok = true;
        let mut off = 0;
        for &d in &dims {
            let mut cols: Vec<usize> = (0..off).collect();
            cols.extend(off + d..total);
            let reduced = r.select_columns(&cols);
            if reduced.ncols() < m || condition_sq(&reduced) > 400.0 {
                ok = false;
            }
            off += d;
        }
        if !ok {
            continue;
        }
        let costs = dims
            .iter()
            .map(|&d| {
                let q = random_spd(rng, d);
                let b = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
                QuadraticCost::new(q, b, rng.random_range(-1.0..1.0)).unwrap()
            })
            .collect();
        let c = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        return AllocationProblem::new(costs, r, c).unwrap();
    }
}

/// Random tree on `nodes` nodes: node `k` attaches to a uniformly chosen
/// earlier node.
pub fn random_tree(rng: &mut ChaCha8Rng, nodes: usize) -> TreeGraph {
    let edges = (1..nodes).map(|k| (rng.random_range(0..k), k)).collect();
    TreeGraph::new(nodes, edges).unwrap()
}
