//! Average consensus on a tree with penalty-backed Groves taxes.
//!
//! Decisions are physical positions and are never projected. Feasibility
//! of the final state is certified against a geometric bound `β(n)`; a
//! society that misses it pays a penalty large enough to dominate any
//! saving from deviating.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{MechanismError, Result};
use crate::problem::{Interval, TypeSpaceBounds};
use crate::scalar::{lit, Scalar};
use crate::strategy::Strategy;

/// Undirected tree with a fixed orientation per edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeGraph {
    nodes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl TreeGraph {
    pub fn new(nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if nodes < 2 {
            return Err(MechanismError::InvalidGraph(format!(
                "a tree needs at least 2 nodes, got {nodes}"
            )));
        }
        if edges.len() != nodes - 1 {
            return Err(MechanismError::InvalidGraph(format!(
                "a tree on {nodes} nodes has {} edges, got {}",
                nodes - 1,
                edges.len()
            )));
        }
        let mut parent: Vec<usize> = (0..nodes).collect();
        fn root(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut neighbors = vec![Vec::new(); nodes];
        for &(u, v) in &edges {
            if u >= nodes || v >= nodes {
                return Err(MechanismError::InvalidGraph(format!(
                    "edge ({u}, {v}) references a node outside 0..{nodes}"
                )));
            }
            if u == v {
                return Err(MechanismError::InvalidGraph(format!("self-loop at node {u}")));
            }
            let (ru, rv) = (root(&mut parent, u), root(&mut parent, v));
            if ru == rv {
                return Err(MechanismError::InvalidGraph(format!(
                    "edge ({u}, {v}) closes a cycle"
                )));
            }
            parent[ru] = rv;
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        Ok(TreeGraph {
            nodes,
            edges,
            neighbors,
        })
    }

    /// Path graph `0 - 1 - ... - (nodes-1)`.
    pub fn path(nodes: usize) -> Result<Self> {
        Self::new(nodes, (1..nodes).map(|i| (i - 1, i)).collect())
    }

    /// Hub `0` joined to `leaves` leaves.
    pub fn star(leaves: usize) -> Result<Self> {
        Self::new(leaves + 1, (1..=leaves).map(|i| (0, i)).collect())
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Node-by-edge matrix with `+1` at the tail and `−1` at the head.
    pub fn incidence<T: Scalar>(&self) -> DMatrix<T> {
        let mut b = DMatrix::zeros(self.nodes, self.edges.len());
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            b[(u, e)] = T::one();
            b[(v, e)] = -T::one();
        }
        b
    }

    /// `BᵀB`, positive definite for a tree.
    pub fn edge_laplacian<T: Scalar>(&self) -> DMatrix<T> {
        let b = self.incidence::<T>();
        b.transpose() * b
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralParams<T> {
    /// `1/λ_max(BᵀB)`.
    pub alpha: T,
    /// `λ_min(BᵀB)/λ_max(BᵀB)`.
    pub rho: T,
    pub lambda_min: T,
    pub lambda_max: T,
}

pub fn spectral_params<T: Scalar>(graph: &TreeGraph) -> SpectralParams<T> {
    let eig = SymmetricEigen::new(graph.edge_laplacian::<T>());
    let lambda_max = eig.eigenvalues.max();
    let lambda_min = eig.eigenvalues.min();
    SpectralParams {
        alpha: T::one() / lambda_max,
        rho: lambda_min / lambda_max,
        lambda_min,
        lambda_max,
    }
}

/// One synchronous round. Faithful nodes move by `α Σ_{j∈𝒩ᵢ}(zⱼ − zᵢ)`;
/// `FixedBid` nodes sit at their bid and `Stationary` nodes stay put.
pub fn consensus_step<T: Scalar>(
    z: &DVector<T>,
    alpha: T,
    graph: &TreeGraph,
    strategies: &[Strategy<T>],
) -> DVector<T> {
    DVector::from_fn(z.len(), |i, _| match &strategies[i] {
        Strategy::FixedBid(bid) => bid[0],
        Strategy::Stationary => z[i],
        _ => {
            let pull = graph.neighbors(i).iter().fold(T::zero(), |a, &j| a + (z[j] - z[i]));
            z[i] + alpha * pull
        }
    })
}

/// Positions `θ` and type boxes `Θ` on a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusProblem<T: Scalar> {
    graph: TreeGraph,
    theta: DVector<T>,
    bounds: TypeSpaceBounds<T>,
}

impl<T: Scalar> ConsensusProblem<T> {
    pub fn new(graph: TreeGraph, theta: Vec<T>, bounds: TypeSpaceBounds<T>) -> Result<Self> {
        let n = graph.nodes();
        if theta.len() != n {
            return Err(MechanismError::DimensionMismatch {
                context: "consensus positions",
                expected: n,
                actual: theta.len(),
            });
        }
        check_bounds(&bounds, n)?;
        for (i, t) in theta.iter().enumerate() {
            if !bounds.follower(i)[0].contains(*t) {
                return Err(MechanismError::UnboundedTypes(format!(
                    "node {i}: position outside its type interval"
                )));
            }
        }
        Ok(ConsensusProblem {
            graph,
            theta: DVector::from_vec(theta),
            bounds,
        })
    }

    pub fn graph(&self) -> &TreeGraph {
        &self.graph
    }

    pub fn theta(&self) -> &DVector<T> {
        &self.theta
    }

    pub fn bounds(&self) -> &TypeSpaceBounds<T> {
        &self.bounds
    }

    pub fn nodes(&self) -> usize {
        self.graph.nodes()
    }

    /// `(z − θᵢ)²`.
    pub fn cost(&self, i: usize, z: T) -> T {
        let d = z - self.theta[i];
        d * d
    }

    pub fn mean(&self) -> T {
        self.theta.sum() / lit(self.nodes() as f64)
    }

    /// Social cost of `z` minus that of the average-consensus optimum.
    pub fn efficiency_gap(&self, z: &DVector<T>) -> T {
        let m = self.mean();
        (0..self.nodes()).fold(T::zero(), |a, i| a + self.cost(i, z[i]) - self.cost(i, m))
    }
}

fn check_bounds<T: Scalar>(bounds: &TypeSpaceBounds<T>, n: usize) -> Result<()> {
    if bounds.followers() != n {
        return Err(MechanismError::UnboundedTypes(format!(
            "bounds cover {} nodes, graph has {n}",
            bounds.followers()
        )));
    }
    for (i, b) in bounds.iter().enumerate() {
        if b.len() != 1 {
            return Err(MechanismError::UnboundedTypes(format!(
                "node {i}: positions are scalar, got {} intervals",
                b.len()
            )));
        }
        if !(b[0].lo.is_finite() && b[0].hi.is_finite()) {
            return Err(MechanismError::UnboundedTypes(format!("node {i}: unbounded interval")));
        }
    }
    Ok(())
}

/// `‖z − mean(z)·1‖₂`.
pub fn consensus_distance<T: Scalar>(z: &DVector<T>) -> T {
    let m = z.sum() / lit(z.len() as f64);
    z.map(|x| x - m).norm()
}

/// `β(n) = (1−ρ)ⁿ ‖B(BᵀB)⁻¹‖₂ max_{q ∈ corners(Θ)} ‖Bᵀq‖₂`.
pub fn beta_bound<T: Scalar>(graph: &TreeGraph, bounds: &TypeSpaceBounds<T>, n: usize) -> Result<T> {
    check_bounds(bounds, graph.nodes())?;
    let nodes = graph.nodes();
    if nodes > 24 {
        return Err(MechanismError::InvalidConfig(format!(
            "corner enumeration over {nodes} nodes is too large"
        )));
    }
    let b = graph.incidence::<T>();
    let btb = b.transpose() * &b;
    let inv = btb
        .clone()
        .cholesky()
        .ok_or_else(|| MechanismError::InvalidGraph("edge Laplacian is singular".into()))?
        .inverse();
    let gain = (&b * inv).singular_values().max();
    let bt = b.transpose();
    let mut q = DVector::zeros(nodes);
    let mut best = T::zero();
    for mask in 0u32..(1u32 << nodes) {
        for (i, iv) in bounds.iter().enumerate() {
            q[i] = if mask & (1 << i) != 0 { iv[0].hi } else { iv[0].lo };
        }
        let v = (&bt * &q).norm();
        if v > best {
            best = v;
        }
    }
    let params = spectral_params::<T>(graph);
    let contraction = T::one() - params.rho;
    let mut scale = T::one();
    for _ in 0..n {
        scale *= contraction;
    }
    Ok(scale * gain * best)
}

/// `𝒴 = [min lower bound, max upper bound]`.
pub fn reachable_interval<T: Scalar>(bounds: &TypeSpaceBounds<T>) -> Result<Interval<T>> {
    let mut it = bounds.iter();
    let first = it
        .next()
        .and_then(|b| b.first())
        .ok_or_else(|| MechanismError::UnboundedTypes("no type intervals".into()))?;
    let (mut lo, mut hi) = (first.lo, first.hi);
    for b in it {
        for iv in b {
            lo = lo.min(iv.lo);
            hi = hi.max(iv.hi);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(MechanismError::UnboundedTypes("unbounded type interval".into()));
    }
    Ok(Interval { lo, hi })
}

/// `Σⱼ sup_{z∈𝒴, θⱼ∈Θⱼ} (z − θⱼ)²`, evaluated term by term at corners.
pub fn penalty_tax_consensus<T: Scalar>(bounds: &TypeSpaceBounds<T>) -> Result<T> {
    let y = reachable_interval(bounds)?;
    let mut total = T::zero();
    for b in bounds.iter() {
        let th = b
            .first()
            .ok_or_else(|| MechanismError::UnboundedTypes("empty type interval list".into()))?;
        let far = (y.hi - th.lo).max(th.hi - y.lo);
        total += far * far;
    }
    Ok(total)
}

/// Roundoff allowance added to `β(n)` in the feasibility test.
///
/// Mean subtraction of an exact consensus state is not exactly zero in
/// floating point; this covers that error and nothing more.
pub fn feasibility_slack<T: Scalar>(problem: &ConsensusProblem<T>) -> T {
    let scale = problem
        .bounds()
        .iter()
        .fold(T::zero(), |a, b| a.max(b[0].lo.abs()).max(b[0].hi.abs()));
    lit::<T>(8.0 * problem.nodes() as f64) * T::default_epsilon() * (scale + T::one())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConsensusRule {
    /// `πᵢ = Σ_{j≠i} v̂ⱼ` whatever the final state.
    GrovesZero,
    /// Groves taxes when `dist(zⁿ, 𝒵) ≤ β(n)`, the penalty otherwise.
    #[default]
    Penalty,
}

impl ConsensusRule {
    pub fn name(&self) -> &'static str {
        match self {
            ConsensusRule::GrovesZero => "groves-zero",
            ConsensusRule::Penalty => "penalty",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusConfig<T> {
    pub n: usize,
    /// Overrides `1/λ_max(BᵀB)`.
    pub alpha: Option<T>,
    pub rule: ConsensusRule,
}

impl<T: Scalar> ConsensusConfig<T> {
    pub fn new(n: usize) -> Self {
        ConsensusConfig {
            n,
            alpha: None,
            rule: ConsensusRule::Penalty,
        }
    }

    pub fn with_alpha(mut self, alpha: T) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn with_rule(mut self, rule: ConsensusRule) -> Self {
        self.rule = rule;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusRun<T: Scalar> {
    pub rule: &'static str,
    pub horizon: usize,
    pub alpha: T,
    pub rho: T,
    /// `z⁰ … zⁿ`.
    pub trajectory: Vec<DVector<T>>,
    pub decision: DVector<T>,
    pub distance: T,
    pub beta: T,
    pub slack: T,
    pub reported: Vec<T>,
    pub true_costs: Vec<T>,
    pub taxes: Vec<T>,
    pub net_costs: Vec<T>,
    pub penalty_triggered: bool,
}

impl<T: Scalar> ConsensusRun<T> {
    pub fn revenue(&self) -> T {
        self.taxes.iter().fold(T::zero(), |a, b| a + *b)
    }
}

fn initial_position<T: Scalar>(i: usize, theta: T, strategy: &Strategy<T>) -> Result<T> {
    match strategy {
        Strategy::FixedBid(bid) => Ok(bid[0]),
        Strategy::MisreportedType(cost) => cost
            .minimizer()
            .map(|m| m[0])
            .ok_or(MechanismError::NotStrictlyConvex { follower: i }),
        _ => Ok(theta),
    }
}

pub fn run_consensus<T: Scalar>(
    problem: &ConsensusProblem<T>,
    strategies: &[Strategy<T>],
    config: &ConsensusConfig<T>,
) -> Result<ConsensusRun<T>> {
    let nodes = problem.nodes();
    if strategies.len() != nodes {
        return Err(MechanismError::StrategyCount {
            expected: nodes,
            actual: strategies.len(),
        });
    }
    for (i, s) in strategies.iter().enumerate() {
        s.check(i, 1)?;
    }
    let params = spectral_params::<T>(problem.graph());
    let alpha = match config.alpha {
        Some(a) if a > T::zero() && a.is_finite() => a,
        Some(_) => {
            return Err(MechanismError::InvalidConfig(
                "consensus step must be positive and finite".into(),
            ))
        }
        None => params.alpha,
    };

    let z0 = DVector::from_iterator(
        nodes,
        (0..nodes)
            .map(|i| initial_position(i, problem.theta()[i], &strategies[i]))
            .collect::<Result<Vec<_>>>()?,
    );
    let mut trajectory = Vec::with_capacity(config.n + 1);
    trajectory.push(z0);
    for _ in 0..config.n {
        let next = consensus_step(trajectory.last().expect("z⁰"), alpha, problem.graph(), strategies);
        trajectory.push(next);
    }
    let decision = trajectory.last().expect("z⁰").clone();

    let true_costs: Vec<T> = (0..nodes).map(|i| problem.cost(i, decision[i])).collect();
    let reported: Vec<T> = true_costs.iter().zip(strategies).map(|(v, s)| s.report(*v)).collect();
    let distance = consensus_distance(&decision);
    let beta = beta_bound(problem.graph(), problem.bounds(), config.n)?;
    let slack = feasibility_slack(problem);

    let penalty_triggered = config.rule == ConsensusRule::Penalty && distance > beta + slack;
    let taxes: Vec<T> = if penalty_triggered {
        vec![penalty_tax_consensus(problem.bounds())?; nodes]
    } else {
        let total = reported.iter().fold(T::zero(), |a, b| a + *b);
        reported.iter().map(|r| total - *r).collect()
    };
    let net_costs = true_costs.iter().zip(&taxes).map(|(v, p)| *v + *p).collect();

    Ok(ConsensusRun {
        rule: config.rule.name(),
        horizon: config.n,
        alpha,
        rho: params.rho,
        trajectory,
        decision,
        distance,
        beta,
        slack,
        reported,
        true_costs,
        taxes,
        net_costs,
        penalty_triggered,
    })
}
