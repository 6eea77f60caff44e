//! Tax rules for the dual-decomposition allocation mechanism: the Groves
//! family (zero pivot and VCG pivot), the naive clearing-price payment, and
//! a penalty wrapper that charges a large constant when the raw bids miss a
//! convergence threshold.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dual::{check_marginal_feasible, check_strategy_count, DualIterationConfig, IterationTrace, Society};
use crate::error::{MechanismError, Result};
use crate::problem::{AllocationProblem, Interval, TypeSpaceBounds};
use crate::scalar::{lit, Scalar};
use crate::strategy::Strategy;

/// `β(n) = scale · rateⁿ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricThreshold<T> {
    pub scale: T,
    pub rate: T,
}

impl<T: Scalar> GeometricThreshold<T> {
    pub fn at(&self, n: usize) -> T {
        let mut r = self.scale;
        for _ in 0..n {
            r *= self.rate;
        }
        r
    }
}

/// Which payment rule the leader applies after the iterations end.
#[derive(Debug, Clone, PartialEq)]
pub enum TaxRule<T: Scalar> {
    /// Groves with `kᵢ ≡ 0`: `πᵢ = Σ_{j≠i} v̂ⱼ`.
    GrovesZero,
    /// Groves with the VCG pivot `kᵢ = −Σ_{j≠i} v̂ⱼ^{−i}`.
    Vcg,
    /// `πᵢ = λᵀ Rᵢ zᵢ` at the final price. Not in the Groves class.
    ClearingPrice,
    /// Inner rule while `dist(ẑⁿ, 𝒵) ≤ β(n)`, otherwise `Cᵢ`.
    Penalty {
        inner: Box<TaxRule<T>>,
        threshold: GeometricThreshold<T>,
        constants: Vec<T>,
    },
}

impl<T: Scalar> TaxRule<T> {
    pub fn penalty(inner: TaxRule<T>, threshold: GeometricThreshold<T>, constants: Vec<T>) -> Result<Self> {
        if constants.iter().any(|c| !c.is_finite()) {
            return Err(MechanismError::InvalidConfig(
                "penalty constants must be finite".into(),
            ));
        }
        if !(threshold.scale.is_finite() && threshold.rate.is_finite()) || threshold.scale < T::zero() || threshold.rate < T::zero() {
            return Err(MechanismError::InvalidConfig(
                "penalty threshold must be finite and non-negative".into(),
            ));
        }
        Ok(TaxRule::Penalty {
            inner: Box::new(inner),
            threshold,
            constants,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaxRule::GrovesZero => "groves-zero",
            TaxRule::Vcg => "vcg",
            TaxRule::ClearingPrice => "clearing-price",
            TaxRule::Penalty { .. } => "penalty",
        }
    }

    fn needs_marginals(&self) -> bool {
        match self {
            TaxRule::Vcg => true,
            TaxRule::Penalty { inner, .. } => inner.needs_marginals(),
            _ => false,
        }
    }
}

/// `Σ_{j≠i} v̂ⱼ + kᵢ`, where `reported` holds every follower's report.
pub fn groves_tax<T: Scalar>(i: usize, reported: &[T], k_i: T) -> T {
    others_sum(i, reported) + k_i
}

/// Pivot tax: others' reported cost at the decision minus their reported
/// cost when `i` is absent.
pub fn vcg_tax<T: Scalar>(at_optimum: T, at_marginal: T) -> T {
    at_optimum - at_marginal
}

/// `λᵀ Rᵢ zᵢ`.
pub fn clearing_price_tax<T: Scalar>(price: &DVector<T>, r_block: &DMatrix<T>, z_block: &DVector<T>) -> T {
    price.dot(&(r_block * z_block))
}

fn others_sum<T: Scalar>(i: usize, values: &[T]) -> T {
    values
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .fold(T::zero(), |acc, (_, v)| acc + *v)
}

/// Penalty constants `Cᵢ = −inf vᵢ + sup Σⱼ vⱼ`, with the extrema taken
/// over the type box and the box `reachable` enclosing the reachable
/// decisions.
///
/// Each cost is written `½(z−θ)ᵀQ(z−θ) + m` with `θ` the target. The
/// supremum is exact (a convex function of `z−θ` peaks at a vertex of the
/// difference box); the infimum is bounded below by
/// `½ λ_min(Q) dist(0, box)² + m`.
pub fn penalty_constant<T: Scalar>(
    problem: &AllocationProblem<T>,
    bounds: &TypeSpaceBounds<T>,
    reachable: &[Interval<T>],
) -> Result<Vec<T>> {
    if bounds.followers() != problem.followers() {
        return Err(MechanismError::UnboundedTypes(format!(
            "bounds cover {} followers, problem has {}",
            bounds.followers(),
            problem.followers()
        )));
    }
    if reachable.len() != problem.total_dim() {
        return Err(MechanismError::UnboundedTypes(format!(
            "reachable box has {} coordinates, decision has {}",
            reachable.len(),
            problem.total_dim()
        )));
    }
    let mut sups = Vec::with_capacity(problem.followers());
    let mut infs = Vec::with_capacity(problem.followers());
    for j in 0..problem.followers() {
        let cost = problem.cost(j);
        let types = bounds.follower(j);
        if types.len() != cost.dim() {
            return Err(MechanismError::UnboundedTypes(format!(
                "follower {j}: {} type intervals for a block of dimension {}",
                types.len(),
                cost.dim()
            )));
        }
        let m = cost.minimum_value().ok_or(MechanismError::NotStrictlyConvex { follower: j })?;
        let zbox = &reachable[problem.block_range(j)];
        let diff: Vec<Interval<T>> = zbox
            .iter()
            .zip(types)
            .map(|(z, t)| Interval {
                lo: z.lo - t.hi,
                hi: z.hi - t.lo,
            })
            .collect();
        sups.push(m + box_vertex_max(cost.curvature(), &diff)?);
        let gap2 = diff
            .iter()
            .map(|d| {
                if d.lo > T::zero() {
                    d.lo * d.lo
                } else if d.hi < T::zero() {
                    d.hi * d.hi
                } else {
                    T::zero()
                }
            })
            .fold(T::zero(), |a, b| a + b);
        let lmin = cost.min_eigenvalue().max(T::zero());
        infs.push(m + lmin * gap2 * lit(0.5));
    }
    let total_sup = sups.iter().fold(T::zero(), |a, b| a + *b);
    Ok(infs.into_iter().map(|inf| total_sup - inf).collect())
}

/// `max ½ dᵀQd` over the vertices of a box.
fn box_vertex_max<T: Scalar>(q: &DMatrix<T>, bx: &[Interval<T>]) -> Result<T> {
    let d = bx.len();
    if d > 20 {
        return Err(MechanismError::InvalidConfig(format!(
            "vertex enumeration over {d} coordinates is too large"
        )));
    }
    let mut best: Option<T> = None;
    let mut v = DVector::zeros(d);
    for mask in 0u32..(1u32 << d) {
        for (k, iv) in bx.iter().enumerate() {
            v[k] = if mask & (1 << k) != 0 { iv.hi } else { iv.lo };
        }
        let val = v.dot(&(q * &v)) * lit(0.5);
        best = Some(match best {
            Some(b) if b >= val => b,
            _ => val,
        });
    }
    Ok(best.unwrap_or_else(T::zero))
}

/// Everything produced by one execution of an allocation mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismRun<T: Scalar> {
    pub rule: &'static str,
    pub horizon: usize,
    /// Announced (projected) allocation.
    pub decision: DVector<T>,
    pub main: IterationTrace<T>,
    /// `marginals[j]` is the run of the society without `j` (VCG only).
    pub marginals: Vec<IterationTrace<T>>,
    /// `v̂ᵢ` reported at the decision.
    pub reported: Vec<T>,
    /// `reported_marginal[i][j] = v̂ᵢ^{−j}`; `None` on the diagonal.
    pub reported_marginal: Vec<Vec<Option<T>>>,
    /// `kᵢ` terms, when the rule is in the Groves family.
    pub k_terms: Option<Vec<T>>,
    pub taxes: Vec<T>,
    /// True costs `vᵢ(zᵢ; θᵢ)`. Never used to compute taxes.
    pub true_costs: Vec<T>,
    pub net_costs: Vec<T>,
    /// `dist(ẑⁿ, 𝒵)` of the raw final-round bids.
    pub raw_distance: T,
    pub penalty_threshold: Option<T>,
    pub penalty_triggered: bool,
}

impl<T: Scalar> MechanismRun<T> {
    /// Leader revenue `Σ πᵢ`.
    pub fn revenue(&self) -> T {
        self.taxes.iter().fold(T::zero(), |a, b| a + *b)
    }

    pub fn social_cost(&self) -> T {
        self.true_costs.iter().fold(T::zero(), |a, b| a + *b)
    }
}

/// Distributed VCG mechanism: main iteration, one marginal iteration per
/// follower, projection, value reports and pivot taxes.
pub fn run_distributed_vcg<T: Scalar>(
    problem: &AllocationProblem<T>,
    strategies: &[Strategy<T>],
    config: &DualIterationConfig<T>,
) -> Result<MechanismRun<T>> {
    run_mechanism(problem, strategies, config, &TaxRule::Vcg)
}

/// Runs the dual-decomposition mechanism under an arbitrary tax rule.
///
/// Deviating followers apply their strategy in the main run and in every
/// marginal run they take part in. Marginal runs use the Lipschitz step of
/// their own reduced society.
pub fn run_mechanism<T: Scalar>(
    problem: &AllocationProblem<T>,
    strategies: &[Strategy<T>],
    config: &DualIterationConfig<T>,
    rule: &TaxRule<T>,
) -> Result<MechanismRun<T>> {
    problem.ensure_valid()?;
    check_strategy_count(problem, strategies)?;
    let n = problem.followers();
    if let TaxRule::Penalty { constants, .. } = rule {
        if constants.len() != n {
            return Err(MechanismError::InvalidConfig(format!(
                "penalty needs {n} constants, got {}",
                constants.len()
            )));
        }
    }

    // Marginal societies are checked before anything is iterated.
    let marginal_societies = if rule.needs_marginals() {
        let mut v = Vec::with_capacity(n);
        for j in 0..n {
            let pin = DVector::zeros(problem.cost(j).dim());
            let s = Society::without(problem, j, &pin)?;
            check_marginal_feasible(&s, j)?;
            v.push(s);
        }
        v
    } else {
        Vec::new()
    };

    let refs: Vec<&Strategy<T>> = strategies.iter().collect();
    let main = Society::full(problem).iterate(&refs, config)?;
    let decision = main.decision.clone();

    let marginal_config = DualIterationConfig::new(config.n);
    let marginals: Vec<IterationTrace<T>> = marginal_societies
        .par_iter()
        .map(|s| {
            let srefs: Vec<&Strategy<T>> = s.members.iter().map(|&i| &strategies[i]).collect();
            s.iterate(&srefs, &marginal_config)
        })
        .collect::<Result<Vec<_>>>()?;

    let true_costs: Vec<T> = (0..n)
        .map(|i| problem.cost(i).evaluate(&problem.block(&decision, i)))
        .collect();
    let reported: Vec<T> = true_costs
        .iter()
        .zip(strategies)
        .map(|(v, s)| s.report(*v))
        .collect();

    let mut reported_marginal = vec![vec![None; n]; n];
    for (j, trace) in marginals.iter().enumerate() {
        let mut off = 0;
        for &i in &trace.members {
            let d = problem.cost(i).dim();
            let zi = trace.decision.rows(off, d);
            reported_marginal[i][j] = Some(strategies[i].report(problem.cost(i).evaluate(&zi)));
            off += d;
        }
    }

    let raw_distance = problem.feasible_set()?.distance(&main.raw_decision)?;
    let ctx = TaxContext {
        problem,
        decision: &decision,
        price: main.final_price(),
        reported: &reported,
        reported_marginal: &reported_marginal,
        raw_distance,
        horizon: config.n,
    };
    let assessed = ctx.assess(rule);

    let net_costs = true_costs
        .iter()
        .zip(&assessed.taxes)
        .map(|(v, p)| *v + *p)
        .collect();

    Ok(MechanismRun {
        rule: rule.name(),
        horizon: config.n,
        decision,
        main,
        marginals,
        reported,
        reported_marginal,
        k_terms: assessed.k_terms,
        taxes: assessed.taxes,
        true_costs,
        net_costs,
        raw_distance,
        penalty_threshold: assessed.threshold,
        penalty_triggered: assessed.triggered,
    })
}

struct TaxContext<'a, T: Scalar> {
    problem: &'a AllocationProblem<T>,
    decision: &'a DVector<T>,
    price: &'a DVector<T>,
    reported: &'a [T],
    reported_marginal: &'a [Vec<Option<T>>],
    raw_distance: T,
    horizon: usize,
}

struct Assessment<T> {
    taxes: Vec<T>,
    k_terms: Option<Vec<T>>,
    threshold: Option<T>,
    triggered: bool,
}

impl<T: Scalar> TaxContext<'_, T> {
    fn assess(&self, rule: &TaxRule<T>) -> Assessment<T> {
        let n = self.problem.followers();
        match rule {
            TaxRule::GrovesZero => Assessment {
                taxes: (0..n).map(|i| groves_tax(i, self.reported, T::zero())).collect(),
                k_terms: Some(vec![T::zero(); n]),
                threshold: None,
                triggered: false,
            },
            TaxRule::Vcg => {
                // kᵢ reads only reports of the others about the society without i.
                let k: Vec<T> = (0..n)
                    .map(|i| {
                        -(0..n)
                            .filter(|&j| j != i)
                            .map(|j| self.reported_marginal[j][i].unwrap_or_else(T::zero))
                            .fold(T::zero(), |a, b| a + b)
                    })
                    .collect();
                let taxes = (0..n)
                    .map(|i| vcg_tax(others_sum(i, self.reported), -k[i]))
                    .collect();
                Assessment {
                    taxes,
                    k_terms: Some(k),
                    threshold: None,
                    triggered: false,
                }
            }
            TaxRule::ClearingPrice => Assessment {
                taxes: (0..n)
                    .map(|i| {
                        let zi = self.problem.block(self.decision, i).into_owned();
                        clearing_price_tax(self.price, &self.problem.r_block(i), &zi)
                    })
                    .collect(),
                k_terms: None,
                threshold: None,
                triggered: false,
            },
            TaxRule::Penalty {
                inner,
                threshold,
                constants,
            } => {
                let beta = threshold.at(self.horizon);
                if self.raw_distance <= beta {
                    let mut a = self.assess(inner);
                    a.threshold = Some(beta);
                    a
                } else {
                    Assessment {
                        taxes: constants.clone(),
                        k_terms: None,
                        threshold: Some(beta),
                        triggered: true,
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::QuadraticCost;
    use approx::assert_abs_diff_eq;

    fn v(target: f64) -> QuadraticCost<f64> {
        QuadraticCost::squared_distance(1.0, &[target])
    }

    fn bandwidth() -> AllocationProblem<f64> {
        AllocationProblem::new(
            vec![v(1.0), v(1.0)],
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 1.0),
        )
        .unwrap()
    }

    fn example1() -> AllocationProblem<f64> {
        AllocationProblem::new(
            vec![v(1.0), v(2.0)],
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::zeros(1),
        )
        .unwrap()
    }

    fn fixed(x: f64) -> Strategy<f64> {
        Strategy::FixedBid(DVector::from_element(1, x))
    }

    #[test]
    fn groves_tax_examples() {
        // Example 1 at decision 2 and 1.5, player 0, k = 0.
        let v2 = v(2.0);
        assert_eq!(groves_tax(0, &[v(1.0).eval(&[2.0]), v2.eval(&[2.0])], 0.0), 0.0);
        assert_eq!(groves_tax(0, &[0.25, v2.eval(&[1.5])], 0.0), 0.25);
        assert_eq!(groves_tax(1, &[0.0, 0.0], 0.0), 0.0);
    }

    #[test]
    fn vcg_tax_is_groves_with_pivot() {
        let at_opt = 0.25;
        let at_marg = 0.0;
        assert_eq!(vcg_tax(at_opt, at_marg), groves_tax(0, &[9.0, 0.25], -at_marg));
    }

    #[test]
    fn clearing_price_examples() {
        let r = DMatrix::from_element(1, 1, 1.0);
        let p = clearing_price_tax(&DVector::from_element(1, 1.0), &r, &DVector::from_element(1, 0.5));
        assert_eq!(p, 0.5);
        let p = clearing_price_tax(
            &DVector::from_element(1, 2.0 / 3.0),
            &r,
            &DVector::from_element(1, 1.0 / 3.0),
        );
        assert_abs_diff_eq!(p, 2.0 / 9.0, epsilon = 1e-16);
        assert_eq!(clearing_price_tax(&DVector::zeros(1), &r, &DVector::from_element(1, 3.0)), 0.0);
    }

    #[test]
    fn penalty_constant_examples() {
        let iv = |a, b| Interval::new(a, b).unwrap();
        // (z − θ)², θ ∈ [0,3], z ∈ [0,3], N = 2 → 18
        let p = AllocationProblem::new(
            vec![v(1.0), v(2.0)],
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 3.0),
        )
        .unwrap();
        let bounds = TypeSpaceBounds::scalar(vec![iv(0.0, 3.0), iv(0.0, 3.0)]).unwrap();
        let c = penalty_constant(&p, &bounds, &[iv(0.0, 3.0), iv(0.0, 3.0)]).unwrap();
        assert_eq!(c, vec![18.0, 18.0]);

        // all-zero costs → 0
        let zero = QuadraticCost::scalar(0.0, 0.0, 0.0);
        let pz = AllocationProblem::new(
            vec![zero.clone(), zero],
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let bz = TypeSpaceBounds::scalar(vec![iv(0.0, 1.0), iv(0.0, 1.0)]).unwrap();
        let c = penalty_constant(&pz, &bz, &[iv(0.0, 1.0), iv(0.0, 1.0)]).unwrap();
        assert_eq!(c, vec![0.0, 0.0]);

        // N = 1, (z − 1)², θ fixed, z ∈ [0,2] → 1
        let p1 = AllocationProblem::new(
            vec![v(1.0)],
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let b1 = TypeSpaceBounds::scalar(vec![Interval::point(1.0)]).unwrap();
        assert_eq!(penalty_constant(&p1, &b1, &[iv(0.0, 2.0)]).unwrap(), vec![1.0]);
    }

    #[test]
    fn penalty_constant_inf_bound_when_box_excludes_target() {
        // θ = 5, z ∈ [0,1]: inf (z−5)² = 16, sup = 25 → C = 9
        let p = AllocationProblem::new(
            vec![v(5.0)],
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let b = TypeSpaceBounds::scalar(vec![Interval::point(5.0)]).unwrap();
        let c = penalty_constant(&p, &b, &[Interval::new(0.0, 1.0).unwrap()]).unwrap();
        assert_eq!(c, vec![9.0]);
    }

    #[test]
    fn penalty_constant_rejects_mismatched_bounds() {
        let b = TypeSpaceBounds::scalar(vec![Interval::point(1.0)]).unwrap();
        assert!(matches!(
            penalty_constant(&bandwidth(), &b, &[Interval::point(0.0), Interval::point(0.0)]),
            Err(MechanismError::UnboundedTypes(_))
        ));
    }

    #[test]
    fn vcg_faithful_bandwidth() {
        let run = run_distributed_vcg(
            &bandwidth(),
            &[Strategy::Faithful, Strategy::Faithful],
            &DualIterationConfig::new(200),
        )
        .unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(run.decision[i], 0.5, epsilon = 1e-5);
            assert_abs_diff_eq!(run.taxes[i], 0.25, epsilon = 1e-5);
            assert_abs_diff_eq!(run.net_costs[i], 0.5, epsilon = 1e-5);
        }
        assert_abs_diff_eq!(run.revenue(), 0.5, epsilon = 1e-5);
        assert_eq!(run.marginals.len(), 2);
    }

    #[test]
    fn vcg_fixed_bid_bandwidth() {
        let run = run_distributed_vcg(
            &bandwidth(),
            &[fixed(1.0 / 3.0), Strategy::Faithful],
            &DualIterationConfig::new(200),
        )
        .unwrap();
        assert_abs_diff_eq!(run.taxes[0], 1.0 / 9.0, epsilon = 1e-5);
        assert_abs_diff_eq!(run.net_costs[0], 5.0 / 9.0, epsilon = 1e-5);
    }

    #[test]
    fn groves_zero_example1() {
        let cfg = DualIterationConfig::new(200);
        let opp = Strategy::MisreportedType(v(3.0));
        let faithful = run_mechanism(&example1(), &[Strategy::Faithful, opp.clone()], &cfg, &TaxRule::GrovesZero).unwrap();
        assert_abs_diff_eq!(faithful.net_costs[0], 1.0, epsilon = 1e-5);
        let liar = Strategy::MisreportedType(QuadraticCost::scalar(2.0, 0.0, 0.0));
        let dev = run_mechanism(&example1(), &[liar, opp], &cfg, &TaxRule::GrovesZero).unwrap();
        assert_abs_diff_eq!(dev.net_costs[0], 0.5, epsilon = 1e-5);
    }

    #[test]
    fn vcg_example1_shifts_nets_by_pivot() {
        // Pivot for follower 0 is −v₂(0) = −4 in both runs.
        let cfg = DualIterationConfig::new(200);
        let opp = Strategy::MisreportedType(v(3.0));
        let faithful = run_distributed_vcg(&example1(), &[Strategy::Faithful, opp.clone()], &cfg).unwrap();
        let liar = Strategy::MisreportedType(QuadraticCost::scalar(2.0, 0.0, 0.0));
        let dev = run_distributed_vcg(&example1(), &[liar, opp], &cfg).unwrap();
        assert_abs_diff_eq!(faithful.net_costs[0], -3.0, epsilon = 1e-5);
        assert_abs_diff_eq!(dev.net_costs[0], -3.5, epsilon = 1e-5);
    }

    #[test]
    fn clearing_price_manipulation() {
        let cfg = DualIterationConfig::new(200);
        let f = run_mechanism(&bandwidth(), &[Strategy::Faithful, Strategy::Faithful], &cfg, &TaxRule::ClearingPrice).unwrap();
        assert_abs_diff_eq!(f.net_costs[0], 0.75, epsilon = 1e-5);
        let d = run_mechanism(&bandwidth(), &[fixed(1.0 / 3.0), Strategy::Faithful], &cfg, &TaxRule::ClearingPrice).unwrap();
        assert_abs_diff_eq!(d.net_costs[0], 2.0 / 3.0, epsilon = 1e-5);
        assert!(f.k_terms.is_none());
    }

    #[test]
    fn zero_impact_follower_pays_nothing() {
        let p = AllocationProblem::new(
            vec![v(1.0), v(1.0), v(2.0)],
            DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let run = run_distributed_vcg(&p, &vec![Strategy::Faithful; 3], &DualIterationConfig::new(200)).unwrap();
        assert_abs_diff_eq!(run.taxes[2], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn penalty_wrapper_switches_on_raw_distance() {
        let cfg = DualIterationConfig::new(50);
        let generous = TaxRule::penalty(
            TaxRule::Vcg,
            GeometricThreshold { scale: 1.0, rate: 1.0 },
            vec![10.0, 10.0],
        )
        .unwrap();
        let run = run_mechanism(&bandwidth(), &[Strategy::Faithful, Strategy::Faithful], &cfg, &generous).unwrap();
        assert!(!run.penalty_triggered);
        assert_abs_diff_eq!(run.taxes[0], 0.25, epsilon = 1e-9);

        // Stationary bids (1, ·) never clear the market within a zero threshold.
        let strict = TaxRule::penalty(
            TaxRule::Vcg,
            GeometricThreshold { scale: 0.0, rate: 0.5 },
            vec![10.0, 10.0],
        )
        .unwrap();
        let run = run_mechanism(&bandwidth(), &[Strategy::Stationary, Strategy::Faithful], &cfg, &strict).unwrap();
        assert!(run.penalty_triggered);
        assert_eq!(run.taxes, vec![10.0, 10.0]);
        assert_eq!(run.penalty_threshold, Some(0.0));
    }

    #[test]
    fn infeasible_marginal_rejected_before_iterating() {
        let p = AllocationProblem::new(
            vec![v(1.0), v(1.0)],
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.5]),
        )
        .unwrap();
        let err = run_distributed_vcg(&p, &[Strategy::Faithful, Strategy::Faithful], &DualIterationConfig::new(10)).unwrap_err();
        assert!(matches!(err, MechanismError::InfeasibleMarginal { follower: 0, .. }));
        // Groves-zero does not need marginals.
        assert!(run_mechanism(&p, &[Strategy::Faithful, Strategy::Faithful], &DualIterationConfig::new(10), &TaxRule::GrovesZero).is_ok());
    }
}
