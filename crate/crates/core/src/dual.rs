//! Dual decomposition: followers best-respond to a broadcast price, the
//! leader moves the price along the constraint residual. Also houses the
//! marginal problems (one follower pinned) and an exact KKT oracle.

use nalgebra::{DMatrix, DVector};

use crate::error::{MechanismError, Result};
use crate::problem::{numerical_rank, AffineSet, AllocationProblem, QuadraticCost};
use crate::scalar::{Scalar, Tolerances};
use crate::strategy::Strategy;

/// Step size, horizon and starting price of a primal-dual run.
#[derive(Debug, Clone, PartialEq)]
pub struct DualIterationConfig<T: Scalar> {
    /// `None` selects `1/λ_max(R Q⁻¹ Rᵀ)` for the society being iterated.
    pub gamma: Option<T>,
    pub n: usize,
    /// `None` starts from the zero price.
    pub lambda0: Option<DVector<T>>,
}

impl<T: Scalar> DualIterationConfig<T> {
    pub fn new(n: usize) -> Self {
        DualIterationConfig {
            gamma: None,
            n,
            lambda0: None,
        }
    }

    pub fn with_gamma(mut self, gamma: T) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn with_lambda0(mut self, lambda0: DVector<T>) -> Self {
        self.lambda0 = Some(lambda0);
        self
    }

    fn check(&self, m: usize) -> Result<()> {
        if self.n == 0 {
            return Err(MechanismError::InvalidConfig(
                "iteration count must be at least 1".into(),
            ));
        }
        if let Some(g) = self.gamma {
            if !(g > T::zero() && g.is_finite()) {
                return Err(MechanismError::InvalidConfig(
                    "step size gamma must be positive".into(),
                ));
            }
        }
        if let Some(l0) = &self.lambda0 {
            if l0.len() != m {
                return Err(MechanismError::DimensionMismatch {
                    context: "initial price",
                    expected: m,
                    actual: l0.len(),
                });
            }
        }
        Ok(())
    }
}

/// One round of the primal-dual loop.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationStep<T: Scalar> {
    pub k: usize,
    pub price_before: DVector<T>,
    /// Bids of the participating followers, concatenated in index order.
    pub bids: DVector<T>,
    pub price_after: DVector<T>,
}

/// Full record of a primal-dual run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace<T: Scalar> {
    /// Followers that took part, in ascending order.
    pub members: Vec<usize>,
    pub gamma: T,
    pub steps: Vec<IterationStep<T>>,
    /// Bids of the final round.
    pub raw_decision: DVector<T>,
    /// `raw_decision` projected onto the feasible set.
    pub decision: DVector<T>,
}

impl<T: Scalar> IterationTrace<T> {
    pub fn final_price(&self) -> &DVector<T> {
        &self.steps.last().expect("at least one step").price_after
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// `argmin_z v(z) + λᵀ Rᵢ z = −Q⁻¹(b + Rᵢᵀλ)`.
pub fn best_response<T: Scalar>(
    cost: &QuadraticCost<T>,
    r_block: &DMatrix<T>,
    price: &DVector<T>,
) -> Result<DVector<T>> {
    if r_block.ncols() != cost.dim() || r_block.nrows() != price.len() {
        return Err(MechanismError::DimensionMismatch {
            context: "best response block",
            expected: cost.dim(),
            actual: r_block.ncols(),
        });
    }
    let rhs = -(cost.linear() + r_block.transpose() * price);
    cost.curvature()
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(MechanismError::SingularCurvature)
}

/// `λ + γ · residual`.
pub fn price_update<T: Scalar>(price: &DVector<T>, gamma: T, residual: &DVector<T>) -> DVector<T> {
    debug_assert_eq!(price.len(), residual.len());
    price + residual * gamma
}

/// A subset of followers sharing the constraint `Σ Rⱼ zⱼ = rhs`.
pub(crate) struct Society<'a, T: Scalar> {
    pub members: Vec<usize>,
    pub costs: Vec<&'a QuadraticCost<T>>,
    pub r_blocks: Vec<DMatrix<T>>,
    pub rhs: DVector<T>,
}

impl<'a, T: Scalar> Society<'a, T> {
    pub fn full(problem: &'a AllocationProblem<T>) -> Self {
        let members: Vec<usize> = (0..problem.followers()).collect();
        Society {
            costs: members.iter().map(|&i| problem.cost(i)).collect(),
            r_blocks: members.iter().map(|&i| problem.r_block(i)).collect(),
            members,
            rhs: problem.budget().clone(),
        }
    }

    /// Society without `excluded`, whose allocation is pinned at `pin`.
    pub fn without(problem: &'a AllocationProblem<T>, excluded: usize, pin: &DVector<T>) -> Result<Self> {
        problem.check_follower(excluded)?;
        let r_ex = problem.r_block(excluded);
        if pin.len() != r_ex.ncols() {
            return Err(MechanismError::DimensionMismatch {
                context: "marginal pin",
                expected: r_ex.ncols(),
                actual: pin.len(),
            });
        }
        let members: Vec<usize> = (0..problem.followers()).filter(|&j| j != excluded).collect();
        Ok(Society {
            costs: members.iter().map(|&j| problem.cost(j)).collect(),
            r_blocks: members.iter().map(|&j| problem.r_block(j)).collect(),
            members,
            rhs: problem.budget() - r_ex * pin,
        })
    }

    pub fn matrix(&self) -> DMatrix<T> {
        let m = self.rhs.len();
        let cols: usize = self.r_blocks.iter().map(DMatrix::ncols).sum();
        let mut r = DMatrix::zeros(m, cols);
        let mut off = 0;
        for b in &self.r_blocks {
            r.columns_mut(off, b.ncols()).copy_from(b);
            off += b.ncols();
        }
        r
    }

    pub fn dims(&self) -> Vec<usize> {
        self.costs.iter().map(|c| c.dim()).collect()
    }

    pub fn rank(&self) -> usize {
        numerical_rank(&self.matrix(), Tolerances::<T>::default().feasibility)
    }

    /// `Σ` of the members' true costs at a concatenated decision.
    pub fn value(&self, z: &DVector<T>) -> T {
        let mut off = 0;
        let mut total = T::zero();
        for c in &self.costs {
            total += c.evaluate(&z.rows(off, c.dim()));
            off += c.dim();
        }
        total
    }

    /// `1/λ_max(R blockdiag(Qⱼ)⁻¹ Rᵀ)`.
    pub fn lipschitz_step(&self) -> Result<T> {
        let m = self.rhs.len();
        let mut gram = DMatrix::zeros(m, m);
        for (cost, rb) in self.costs.iter().zip(&self.r_blocks) {
            let lu = cost.curvature().clone().lu();
            let qinv_rt = lu
                .solve(&rb.transpose())
                .ok_or(MechanismError::SingularCurvature)?;
            gram += rb * qinv_rt;
        }
        if m == 0 {
            return Ok(T::one());
        }
        let sym = (&gram + gram.transpose()) * crate::scalar::lit::<T>(0.5);
        let lmax = sym.symmetric_eigenvalues().max();
        if lmax > T::zero() {
            Ok(T::one() / lmax)
        } else {
            Ok(T::one())
        }
    }

    /// Runs `config.n` rounds with each member following its strategy.
    pub fn iterate(
        &self,
        strategies: &[&Strategy<T>],
        config: &DualIterationConfig<T>,
    ) -> Result<IterationTrace<T>> {
        let m = self.rhs.len();
        config.check(m)?;
        for ((&i, s), c) in self.members.iter().zip(strategies).zip(&self.costs) {
            s.check(i, c.dim())?;
        }
        let gamma = match config.gamma {
            Some(g) => g,
            None => self.lipschitz_step()?,
        };
        let lambda0 = config.lambda0.clone().unwrap_or_else(|| DVector::zeros(m));
        let dims = self.dims();
        let total: usize = dims.iter().sum();
        let r = self.matrix();

        let mut price = lambda0.clone();
        let mut steps = Vec::with_capacity(config.n);
        let mut bids = DVector::zeros(total);
        for k in 1..=config.n {
            let mut off = 0;
            for (idx, (&i, s)) in self.members.iter().zip(strategies).enumerate() {
                let bid = s.bid(i, self.costs[idx], &self.r_blocks[idx], &price, &lambda0)?;
                bids.rows_mut(off, dims[idx]).copy_from(&bid);
                off += dims[idx];
            }
            let residual = &r * &bids - &self.rhs;
            let next = price_update(&price, gamma, &residual);
            steps.push(IterationStep {
                k,
                price_before: price,
                bids: bids.clone(),
                price_after: next.clone(),
            });
            price = next;
        }

        let decision = if m == 0 {
            bids.clone()
        } else {
            AffineSet::new(r, self.rhs.clone())?.project(&bids)?
        };
        Ok(IterationTrace {
            members: self.members.clone(),
            gamma,
            steps,
            raw_decision: bids,
            decision,
        })
    }

    /// Solves `[blockdiag(Q) Rᵀ; R 0][z; λ] = [−b; rhs]`.
    pub fn kkt(&self) -> Result<KktSolution<T>> {
        let dims = self.dims();
        let nz: usize = dims.iter().sum();
        let m = self.rhs.len();
        let size = nz + m;
        let r = self.matrix();
        let mut k = DMatrix::zeros(size, size);
        let mut rhs = DVector::zeros(size);
        let mut off = 0;
        for (c, &d) in self.costs.iter().zip(&dims) {
            k.view_mut((off, off), (d, d)).copy_from(c.curvature());
            rhs.rows_mut(off, d).copy_from(&(-c.linear()));
            off += d;
        }
        k.view_mut((nz, 0), (m, nz)).copy_from(&r);
        k.view_mut((0, nz), (nz, m)).copy_from(&r.transpose());
        rhs.rows_mut(nz, m).copy_from(&self.rhs);

        let sol = k.clone().lu().solve(&rhs).ok_or(MechanismError::SingularKkt)?;
        let residual = (&k * &sol - &rhs).amax();
        if !residual.is_finite() {
            return Err(MechanismError::SingularKkt);
        }
        Ok(KktSolution {
            z: sol.rows(0, nz).into_owned(),
            lambda: sol.rows(nz, m).into_owned(),
            residual,
        })
    }
}

/// Runs the primal-dual loop on the full society.
pub fn run_primal_dual<T: Scalar>(
    problem: &AllocationProblem<T>,
    strategies: &[Strategy<T>],
    config: &DualIterationConfig<T>,
) -> Result<IterationTrace<T>> {
    problem.ensure_valid()?;
    check_strategy_count(problem, strategies)?;
    let refs: Vec<&Strategy<T>> = strategies.iter().collect();
    Society::full(problem).iterate(&refs, config)
}

pub(crate) fn check_strategy_count<T: Scalar>(
    problem: &AllocationProblem<T>,
    strategies: &[Strategy<T>],
) -> Result<()> {
    if strategies.len() != problem.followers() {
        return Err(MechanismError::StrategyCount {
            expected: problem.followers(),
            actual: strategies.len(),
        });
    }
    Ok(())
}

/// Primal-dual optimum `(z*, λ*)` with the linear-system residual.
#[derive(Debug, Clone, PartialEq)]
pub struct KktSolution<T: Scalar> {
    pub z: DVector<T>,
    pub lambda: DVector<T>,
    pub residual: T,
}

/// Exact saddle point by a dense factorization of the KKT matrix.
pub fn exact_kkt_solve<T: Scalar>(problem: &AllocationProblem<T>) -> Result<KktSolution<T>> {
    Society::full(problem).kkt()
}

/// How marginal problems are solved.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginalMode<T: Scalar> {
    /// Dense KKT solve.
    Exact,
    /// Faithful dual iterations over the reduced society.
    Iterative(DualIterationConfig<T>),
}

/// Primal-dual solution of the problem with one follower pinned.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSolution<T: Scalar> {
    pub excluded: usize,
    pub pin: DVector<T>,
    /// Followers other than `excluded`, ascending.
    pub members: Vec<usize>,
    /// Their allocations, concatenated in `members` order.
    pub decision: DVector<T>,
    pub price: DVector<T>,
    /// `Σ_{j≠i} vⱼ(zⱼ)`.
    pub value: T,
}

impl<T: Scalar> MarginalSolution<T> {
    /// Allocation of follower `j` (≠ excluded) in the marginal solution.
    pub fn block(&self, problem: &AllocationProblem<T>, j: usize) -> Option<DVector<T>> {
        let mut off = 0;
        for &member in &self.members {
            let d = problem.cost(member).dim();
            if member == j {
                return Some(self.decision.rows(off, d).into_owned());
            }
            off += d;
        }
        None
    }
}

pub(crate) fn check_marginal_feasible<T: Scalar>(society: &Society<'_, T>, excluded: usize) -> Result<()> {
    let rows = society.rhs.len();
    let rank = society.rank();
    if rank < rows {
        return Err(MechanismError::InfeasibleMarginal {
            follower: excluded,
            rank,
            rows,
        });
    }
    Ok(())
}

/// Solves the marginal problem with follower `i`'s allocation fixed at `pin`.
pub fn solve_marginal<T: Scalar>(
    problem: &AllocationProblem<T>,
    i: usize,
    pin: &DVector<T>,
    mode: &MarginalMode<T>,
) -> Result<MarginalSolution<T>> {
    let society = Society::without(problem, i, pin)?;
    check_marginal_feasible(&society, i)?;
    let (decision, price) = match mode {
        MarginalMode::Exact => {
            let sol = society.kkt()?;
            (sol.z, sol.lambda)
        }
        MarginalMode::Iterative(config) => {
            let faithful = Strategy::Faithful;
            let refs = vec![&faithful; society.members.len()];
            let trace = society.iterate(&refs, config)?;
            let price = trace.final_price().clone();
            (trace.decision, price)
        }
    };
    Ok(MarginalSolution {
        excluded: i,
        pin: pin.clone(),
        value: society.value(&decision),
        members: society.members,
        decision,
        price,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
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

    fn scalar(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn best_response_examples() {
        let r = DMatrix::from_element(1, 1, 1.0);
        assert_abs_diff_eq!(best_response(&v(1.0), &r, &scalar(1.0)).unwrap()[0], 0.5);
        assert_abs_diff_eq!(best_response(&v(1.0), &r, &scalar(0.0)).unwrap()[0], 1.0);
        assert_abs_diff_eq!(
            best_response(&v(1.0), &r, &scalar(2.0 / 3.0)).unwrap()[0],
            2.0 / 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn best_response_gradient_vanishes() {
        let cost = QuadraticCost::new(
            DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]),
            DVector::from_vec(vec![0.5, -1.0]),
            0.0,
        )
        .unwrap();
        let r = DMatrix::from_row_slice(1, 2, &[1.0, -2.0]);
        let lam = scalar(0.7);
        let z = best_response(&cost, &r, &lam).unwrap();
        let grad = cost.gradient(&z.as_view()) + r.transpose() * &lam;
        assert!(grad.norm() <= 1e-10);
    }

    #[test]
    fn best_response_singular() {
        let flat = QuadraticCost::scalar(0.0, 1.0, 0.0);
        let r = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(
            best_response(&flat, &r, &scalar(0.0)).unwrap_err(),
            MechanismError::SingularCurvature
        );
    }

    #[test]
    fn price_update_examples() {
        assert_eq!(price_update(&scalar(1.0), 0.5, &scalar(0.0)), scalar(1.0));
        assert_eq!(price_update(&scalar(0.0), 0.5, &scalar(1.0)), scalar(0.5));
        let r = 1.0 / 3.0 + 2.0 / 3.0 - 1.0;
        assert_eq!(price_update(&scalar(2.0 / 3.0), 0.3, &scalar(r)), scalar(2.0 / 3.0));
    }

    #[test]
    fn primal_dual_faithful_bandwidth() {
        let p = bandwidth();
        let cfg = DualIterationConfig::new(100).with_gamma(0.5);
        let t = run_primal_dual(&p, &[Strategy::Faithful, Strategy::Faithful], &cfg).unwrap();
        assert_eq!(t.len(), 100);
        assert_abs_diff_eq!(t.decision[0], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(t.decision[1], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(t.final_price()[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn primal_dual_fixed_bid() {
        let p = bandwidth();
        let cfg = DualIterationConfig::new(100).with_gamma(0.5);
        let s = [Strategy::FixedBid(scalar(1.0 / 3.0)), Strategy::Faithful];
        let t = run_primal_dual(&p, &s, &cfg).unwrap();
        assert_abs_diff_eq!(t.decision[0], 1.0 / 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(t.decision[1], 2.0 / 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(t.final_price()[0], 2.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn primal_dual_example1() {
        let cfg = DualIterationConfig::new(100).with_gamma(0.5);
        let t = run_primal_dual(&example1(), &[Strategy::Faithful, Strategy::Faithful], &cfg).unwrap();
        assert_abs_diff_eq!(t.decision[0], 1.5, epsilon = 1e-6);
        assert_abs_diff_eq!(t.decision[1], 1.5, epsilon = 1e-6);
        assert_abs_diff_eq!(t.final_price()[0], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn trace_records_exact_price_law() {
        let p = bandwidth();
        let cfg = DualIterationConfig::new(20).with_gamma(0.3);
        let t = run_primal_dual(&p, &[Strategy::Faithful, Strategy::Faithful], &cfg).unwrap();
        for (idx, step) in t.steps.iter().enumerate() {
            assert_eq!(step.k, idx + 1);
            let residual = p.constraint() * &step.bids - p.budget();
            assert_eq!(step.price_after, price_update(&step.price_before, 0.3, &residual));
            if idx > 0 {
                assert_eq!(step.price_before, t.steps[idx - 1].price_after);
            }
        }
    }

    #[test]
    fn wrong_bid_dimension_names_follower() {
        let s = [Strategy::Faithful, Strategy::FixedBid(DVector::from_vec(vec![0.1, 0.2]))];
        let err = run_primal_dual(&bandwidth(), &s, &DualIterationConfig::new(5)).unwrap_err();
        assert!(matches!(err, MechanismError::BadBid { follower: 1, .. }));
    }

    #[test]
    fn config_rejects_bad_values() {
        let s = [Strategy::Faithful, Strategy::Faithful];
        assert!(run_primal_dual(&bandwidth(), &s, &DualIterationConfig::new(0)).is_err());
        assert!(run_primal_dual(&bandwidth(), &s, &DualIterationConfig::new(3).with_gamma(-1.0)).is_err());
    }

    #[test]
    fn default_step_is_lipschitz_rule() {
        // R Q^{-1} R^T = 1/2 + 1/2 = 1
        let p = bandwidth();
        let faithful = Strategy::Faithful;
        let t = Society::full(&p)
            .iterate(&[&faithful, &faithful], &DualIterationConfig::new(1))
            .unwrap();
        assert_eq!(t.gamma, 1.0);
    }

    #[test]
    fn kkt_examples() {
        let s = exact_kkt_solve(&bandwidth()).unwrap();
        assert_abs_diff_eq!(s.z[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(s.z[1], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(s.lambda[0], 1.0, epsilon = 1e-14);
        assert!(s.residual <= 1e-10);

        let s = exact_kkt_solve(&example1()).unwrap();
        assert_abs_diff_eq!(s.z[0], 1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(s.lambda[0], -1.0, epsilon = 1e-14);

        let single = AllocationProblem::new(
            vec![v(1.0)],
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let s = exact_kkt_solve(&single).unwrap();
        assert_abs_diff_eq!(s.z[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.lambda[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn marginal_examples() {
        // λ^{-1*}(x) = 2x, z₂ = 1 − x, value (1 − z₂ − 1)^2 = x^2
        let p = bandwidth();
        for (x, z2, lam, val) in [(0.0, 1.0, 0.0, 0.0), (0.5, 0.5, 1.0, 0.25), (1.0, 0.0, 2.0, 1.0)] {
            for mode in [
                MarginalMode::Exact,
                MarginalMode::Iterative(DualIterationConfig::new(200)),
            ] {
                let m = solve_marginal(&p, 0, &scalar(x), &mode).unwrap();
                assert_eq!(m.members, vec![1]);
                assert_abs_diff_eq!(m.decision[0], z2, epsilon = 1e-6);
                assert_abs_diff_eq!(m.price[0], lam, epsilon = 1e-6);
                assert_abs_diff_eq!(m.value, val, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn marginal_infeasible_when_excluded_follower_carries_constraint() {
        // Second row only involves follower 0.
        let p = AllocationProblem::new(
            vec![v(1.0), v(1.0)],
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.5]),
        )
        .unwrap();
        let err = solve_marginal(&p, 0, &scalar(0.0), &MarginalMode::Exact).unwrap_err();
        assert_eq!(
            err,
            MechanismError::InfeasibleMarginal {
                follower: 0,
                rank: 1,
                rows: 2
            }
        );
    }

    #[test]
    fn replay_is_bitwise_identical() {
        let p = example1();
        let cfg = DualIterationConfig::new(50).with_gamma(0.4);
        let s = [Strategy::MisreportedType(v(3.0)), Strategy::Faithful];
        assert_eq!(
            run_primal_dual(&p, &s, &cfg).unwrap(),
            run_primal_dual(&p, &s, &cfg).unwrap()
        );
    }
}
