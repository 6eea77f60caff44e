//! VCG taxes recovered from marginal market-clearing prices.
//!
//! Pinning follower `i` at `x` and clearing the rest of society gives a
//! price `λ^{−i}(x)`. Along the straight path `x(t) = t·zᵢ*` the VCG tax is
//! `∫₀¹ λ^{−i}(t zᵢ*)ᵀ Rᵢ zᵢ* dt`, approximated here by a Riemann sum.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::dual::{exact_kkt_solve, solve_marginal, MarginalMode};
use crate::error::{MechanismError, Result};
use crate::problem::AllocationProblem;
use crate::scalar::{lit, to_f64, Scalar};

pub const DEFAULT_PARTITION: usize = 64;

/// Quadrature used by [`integrate_vcg`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    /// `(1/K) Σ_{k} f(t_k)` over `t_k = (k−1)/K`.
    #[default]
    LeftEndpoint,
    /// Trapezoid rule over the same partition plus the endpoint `t = 1`.
    Trapezoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSample<T: Scalar> {
    pub t: T,
    pub pin: DVector<T>,
    pub price: DVector<T>,
    /// `λᵀ Rᵢ zᵢ*`.
    pub integrand: T,
}

/// Marginal prices sampled on the partition `t_k = (k−1)/K`, `k = 1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePath<T: Scalar> {
    pub follower: usize,
    /// `zᵢ*`, follower `i`'s block of the exact optimum.
    pub target: DVector<T>,
    pub samples: Vec<PriceSample<T>>,
    /// Sample at `t = 1`.
    pub endpoint: PriceSample<T>,
}

impl<T: Scalar> PricePath<T> {
    pub fn partition(&self) -> usize {
        self.samples.len()
    }
}

/// Solves the marginal problem at every partition point and at `t = 1`.
pub fn clearing_price_curve<T: Scalar>(
    problem: &AllocationProblem<T>,
    i: usize,
    k: usize,
    mode: &MarginalMode<T>,
) -> Result<PricePath<T>> {
    problem.ensure_valid()?;
    problem.check_follower(i)?;
    if k == 0 {
        return Err(MechanismError::InvalidConfig(
            "partition size must be at least 1".into(),
        ));
    }
    let target = problem.block(&exact_kkt_solve(problem)?.z, i).into_owned();
    let r_i = problem.r_block(i);
    let direction = &r_i * &target;
    let kt: T = lit(k as f64);
    let sample = |j: usize| -> Result<PriceSample<T>> {
        let t = lit::<T>(j as f64) / kt;
        let pin = &target * t;
        let sol = solve_marginal(problem, i, &pin, mode).map_err(|e| match e {
            MechanismError::InfeasibleMarginal { follower, .. } => MechanismError::InfeasiblePin {
                follower,
                t: to_f64(t),
            },
            other => other,
        })?;
        Ok(PriceSample {
            t,
            integrand: sol.price.dot(&direction),
            pin,
            price: sol.price,
        })
    };
    let mut all = (0..=k).into_par_iter().map(sample).collect::<Result<Vec<_>>>()?;
    let endpoint = all.pop().expect("k + 1 samples");
    Ok(PricePath {
        follower: i,
        target,
        samples: all,
        endpoint,
    })
}

/// Riemann approximation of the VCG tax along the path.
pub fn integrate_vcg<T: Scalar>(path: &PricePath<T>, quadrature: Quadrature) -> T {
    let k: T = lit(path.partition() as f64);
    let sum = path.samples.iter().fold(T::zero(), |a, s| a + s.integrand);
    match quadrature {
        Quadrature::LeftEndpoint => sum / k,
        Quadrature::Trapezoid => {
            let first = path.samples.first().map_or_else(T::zero, |s| s.integrand);
            (sum + (path.endpoint.integrand - first) * lit(0.5)) / k
        }
    }
}

/// `clearing_price_curve` followed by `integrate_vcg`.
pub fn price_path_tax<T: Scalar>(
    problem: &AllocationProblem<T>,
    i: usize,
    k: usize,
    mode: &MarginalMode<T>,
    quadrature: Quadrature,
) -> Result<T> {
    Ok(integrate_vcg(&clearing_price_curve(problem, i, k, mode)?, quadrature))
}
