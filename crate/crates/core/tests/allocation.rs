mod common;

use common::*;
use faithful_mech::{
    clearing_price_curve, clearing_price_tax, exact_kkt_solve, groves_tax, integrate_vcg, run_distributed_vcg,
    run_mechanism, run_primal_dual, social_cost, solve_marginal, AllocationProblem, DualIterationConfig,
    MarginalMode, QuadraticCost, Quadrature, Strategy, TaxRule,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn faithful(p: &AllocationProblem<f64>) -> Vec<Strategy<f64>> {
    vec![Strategy::Faithful; p.followers()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_idempotent(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let p = random_problem(&mut rng);
        let set = p.feasible_set().unwrap();
        let z = DVector::from_fn(p.total_dim(), |_, _| rng.random_range(-5.0..5.0));
        let once = set.project(&z).unwrap();
        let twice = set.project(&once).unwrap();
        prop_assert!((twice - &once).amax() <= 1e-12);
    }

    #[test]
    fn projection_satisfies_pythagoras(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let p = random_problem(&mut rng);
        let set = p.feasible_set().unwrap();
        let d = p.total_dim();
        let z = DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0));
        let w = set.project(&DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0))).unwrap();
        let pz = set.project(&z).unwrap();
        let lhs = (&z - &w).norm_squared();
        let rhs = (&z - &pz).norm_squared() + (&pz - &w).norm_squared();
        prop_assert!((lhs - rhs).abs() <= 1e-9);
    }

    #[test]
    fn social_cost_is_midpoint_convex(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let p = random_problem(&mut rng);
        let d = p.total_dim();
        let z = DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0));
        let w = DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0));
        let mid = (&z + &w) * 0.5;
        let f = |x: &DVector<f64>| social_cost(&p, x).unwrap();
        prop_assert!(f(&mid) <= 0.5 * f(&z) + 0.5 * f(&w) + 1e-12);
    }

    #[test]
    fn distance_vanishes_exactly_on_feasible_points(seed in any::<u64>(), scale in prop::sample::select(vec![0.0, 1e-3, 0.1, 1.0])) {
        let mut rng = rng(seed);
        let p = random_problem(&mut rng);
        let set = p.feasible_set().unwrap();
        let d = p.total_dim();
        let base = set.project(&DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0))).unwrap();
        let u = DVector::from_fn(p.constraints(), |_, _| rng.random_range(-1.0..1.0));
        let z = &base + p.constraint().transpose() * u * scale;
        let dist = set.distance(&z).unwrap();
        let residual = set.residual_inf(&z).unwrap();
        prop_assert_eq!(dist <= 1e-12, residual <= 1e-9);
    }

    #[test]
    fn dual_residual_is_monotone_after_burn_in(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let p = random_problem(&mut rng);
        let run = run_primal_dual(&p, &faithful(&p), &DualIterationConfig::new(200)).unwrap();
        let residuals: Vec<f64> = run
            .steps
            .iter()
            .map(|s| (p.constraint() * &s.bids - p.budget()).norm())
            .collect();
        for pair in residuals[10..].windows(2) {
            prop_assert!(pair[1] <= pair[0] * (1.0 + 1e-9) + 1e-14);
        }
    }

    #[test]
    fn pinning_at_the_optimum_changes_nothing(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let p = random_problem(&mut rng);
        let exact = exact_kkt_solve(&p).unwrap();
        let i = rng.random_range(0..p.followers());
        let pin = p.block(&exact.z, i).into_owned();
        let m = solve_marginal(&p, i, &pin, &MarginalMode::Exact).unwrap();
        for j in (0..p.followers()).filter(|&j| j != i) {
            let got = m.block(&p, j).unwrap();
            prop_assert!((got - p.block(&exact.z, j)).amax() <= 1e-6);
        }
    }

    #[test]
    fn replay_is_bit_identical(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let p = random_problem(&mut rng);
        let cfg = DualIterationConfig::new(100);
        let a = run_distributed_vcg(&p, &faithful(&p), &cfg).unwrap();
        let b = run_distributed_vcg(&p, &faithful(&p), &cfg).unwrap();
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn vcg_tax_is_a_groves_tax(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let p = random_problem(&mut rng);
        let run = run_distributed_vcg(&p, &faithful(&p), &DualIterationConfig::new(100)).unwrap();
        let k = run.k_terms.as_ref().unwrap();
        for i in 0..p.followers() {
            prop_assert_eq!(run.taxes[i].to_bits(), groves_tax(i, &run.reported, k[i]).to_bits());
        }
    }

    #[test]
    fn own_report_never_moves_own_tax(seed in any::<u64>(), a in -5.0..5.0f64, b in -5.0..5.0f64) {
        let mut rng = rng(seed);
        let p = random_problem(&mut rng);
        let i = rng.random_range(0..p.followers());
        let cfg = DualIterationConfig::new(100);
        let mut sa = faithful(&p);
        let mut sb = faithful(&p);
        sa[i] = Strategy::MisreportValue(a);
        sb[i] = Strategy::MisreportValue(b);
        let ra = run_distributed_vcg(&p, &sa, &cfg).unwrap();
        let rb = run_distributed_vcg(&p, &sb, &cfg).unwrap();
        prop_assert_eq!(ra.taxes[i].to_bits(), rb.taxes[i].to_bits());
        prop_assert_eq!(ra.net_costs[i].to_bits(), rb.net_costs[i].to_bits());
    }

    #[test]
    fn any_single_fault_leaves_decision_feasible(seed in any::<u64>(), n in 1usize..80) {
        let mut rng = rng(seed);
        let p = random_problem(&mut rng);
        let i = rng.random_range(0..p.followers());
        let d = p.cost(i).dim();
        let mut s = faithful(&p);
        s[i] = match rng.random_range(0..4) {
            0 => Strategy::FixedBid(DVector::from_fn(d, |_, _| rng.random_range(-10.0..10.0))),
            1 => Strategy::Stationary,
            2 => Strategy::MisreportValue(rng.random_range(-3.0..3.0)),
            _ => Strategy::MisreportedType(
                QuadraticCost::new(random_spd(&mut rng, d), DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0)), 0.0).unwrap(),
            ),
        };
        let run = run_mechanism(&p, &s, &DualIterationConfig::new(n), &TaxRule::Vcg).unwrap();
        prop_assert!((p.constraint() * &run.decision - p.budget()).amax() <= 1e-9);
    }
}

/// Scalar allocations with one coupling row and no zero coefficients.
fn random_scalar_problem(rng: &mut rand_chacha::ChaCha8Rng) -> AllocationProblem<f64> {
    let n = rng.random_range(3..=5);
    let costs = (0..n)
        .map(|_| QuadraticCost::scalar(rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0), 0.0))
        .collect();
    let r = DMatrix::from_fn(1, n, |_, _| {
        let x: f64 = rng.random_range(0.3..1.0);
        if rng.random_bool(0.5) { x } else { -x }
    });
    AllocationProblem::new(costs, r, DVector::from_element(1, rng.random_range(-1.0..1.0))).unwrap()
}

#[test]
fn left_sum_converges_at_first_order() {
    let mut rng = rng(7);
    for _ in 0..20 {
        let p = random_scalar_problem(&mut rng);
        let vcg = run_distributed_vcg(&p, &faithful(&p), &DualIterationConfig::new(3000)).unwrap();
        for i in 0..p.followers() {
            let err = |k| {
                integrate_vcg(&clearing_price_curve(&p, i, k, &MarginalMode::Exact).unwrap(), Quadrature::LeftEndpoint)
                    - vcg.taxes[i]
            };
            let (e32, e64) = (err(32), err(64));
            if e32.abs() < 1e-8 {
                continue;
            }
            let ratio = e64 / e32;
            assert!((0.4..=0.6).contains(&ratio), "follower {i}: ratio {ratio}");
            assert!(e64.abs() * 64.0 <= e32.abs() * 32.0 * 1.01 + 1e-9);
        }
    }
}

#[test]
fn trapezoid_option_is_exact_on_affine_prices() {
    let mut rng = rng(8);
    let p = random_scalar_problem(&mut rng);
    let vcg = run_distributed_vcg(&p, &faithful(&p), &DualIterationConfig::new(3000)).unwrap();
    let path = clearing_price_curve(&p, 0, 4, &MarginalMode::Exact).unwrap();
    assert!((integrate_vcg(&path, Quadrature::Trapezoid) - vcg.taxes[0]).abs() <= 1e-8);
}

/// `(z−1)²` for follower 0 and `m(z−1)²` for follower 1 sharing one unit.
fn market(m: f64) -> AllocationProblem<f64> {
    AllocationProblem::new(
        vec![target(1.0), QuadraticCost::squared_distance(m, &[1.0])],
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        DVector::from_element(1, 1.0),
    )
    .unwrap()
}

#[test]
fn small_market_power_closes_the_price_gap() {
    // Stiffer competitors make follower 0 a price taker.
    let gaps: Vec<f64> = [1.0, 10.0, 100.0]
        .iter()
        .map(|&m| {
            let p = market(m);
            let exact = exact_kkt_solve(&p).unwrap();
            let vcg = integrate_vcg(&clearing_price_curve(&p, 0, 256, &MarginalMode::Exact).unwrap(), Quadrature::Trapezoid);
            let cp = clearing_price_tax(&exact.lambda, &p.r_block(0), &p.block(&exact.z, 0).into_owned());
            (vcg - cp).abs()
        })
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    for (gap, m) in gaps.iter().zip([1.0, 10.0, 100.0]) {
        assert!((gap - m / (1.0 + m) / (1.0 + m)).abs() <= 1e-9);
    }
}

#[test]
fn many_small_followers_close_the_price_gap() {
    let gap = |n: usize| {
        let p = AllocationProblem::new(
            vec![target(1.0); n],
            DMatrix::from_element(1, n, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let exact = exact_kkt_solve(&p).unwrap();
        let vcg = integrate_vcg(&clearing_price_curve(&p, 0, 8, &MarginalMode::Exact).unwrap(), Quadrature::Trapezoid);
        let cp = clearing_price_tax(&exact.lambda, &p.r_block(0), &p.block(&exact.z, 0).into_owned());
        (vcg - cp).abs()
    };
    let g: Vec<f64> = [2, 4, 8].iter().map(|&n| gap(n)).collect();
    assert!(g[0] > g[1] && g[1] > g[2], "{g:?}");
}

#[test]
fn marginal_solution_approaches_optimum_linearly_along_the_path() {
    let mut rng = rng(9);
    for _ in 0..10 {
        let p = random_problem(&mut rng);
        let exact = exact_kkt_solve(&p).unwrap();
        let i = rng.random_range(0..p.followers());
        let zi = p.block(&exact.z, i).into_owned();
        let gap = |t: f64| {
            let m = solve_marginal(&p, i, &(&zi * t), &MarginalMode::Exact).unwrap();
            (0..p.followers())
                .filter(|&j| j != i)
                .map(|j| (m.block(&p, j).unwrap() - p.block(&exact.z, j)).norm_squared())
                .sum::<f64>()
                .sqrt()
        };
        let g0 = gap(0.0);
        for t in [0.9, 0.99, 0.999] {
            assert!((gap(t) - (1.0 - t) * g0).abs() <= 1e-9 * (1.0 + g0), "t = {t}");
        }
        assert!(gap(1.0) <= 1e-9);
    }
}

#[test]
fn pivot_rule_is_asymptotically_faithful_and_clearing_price_is_not() {
    let fixed = Strategy::FixedBid(scalar(1.0 / 3.0));
    for n in [200, 400] {
        let cfg = DualIterationConfig::new(n);
        let net = |s: &Strategy<f64>, rule: &TaxRule<f64>| {
            run_mechanism(&bandwidth(), &[s.clone(), Strategy::Faithful], &cfg, rule).unwrap().net_costs[0]
        };
        let vcg_gain = net(&Strategy::Faithful, &TaxRule::Vcg) - net(&fixed, &TaxRule::Vcg);
        let cp_gain = net(&Strategy::Faithful, &TaxRule::ClearingPrice) - net(&fixed, &TaxRule::ClearingPrice);
        assert!(vcg_gain <= 1e-5);
        assert!((cp_gain - 1.0 / 12.0).abs() <= 1e-5);
    }
}

#[test]
fn revenue_is_logged_on_every_run() {
    let run = run_distributed_vcg(&example1(), &faithful(&example1()), &DualIterationConfig::new(300)).unwrap();
    assert!(run.revenue().is_finite());
    let groves = run_mechanism(&example1(), &faithful(&example1()), &DualIterationConfig::new(300), &TaxRule::GrovesZero).unwrap();
    assert!((groves.revenue() - 0.5).abs() <= 1e-6);
}
