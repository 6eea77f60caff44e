//! Incentive-compatible distributed optimization.
//!
//! A leader allocates a shared resource among followers who hold private
//! quadratic costs. Allocation runs as dual decomposition: the leader posts
//! prices, followers answer with best responses. Groves-family taxes,
//! computed from reported values and from marginal runs without each
//! follower, make faithful execution an asymptotic equilibrium. A second
//! mechanism runs average consensus on a tree and backs its Groves taxes
//! with a penalty for societies that fail to converge.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases at the crate root fix `f64`.

pub mod audit;
pub mod consensus;
pub mod dual;
pub mod error;
pub mod price_path;
pub mod problem;
pub mod scalar;
pub mod strategy;
pub mod tax;

pub use audit::{
    audit_epsilon_ic, budget_and_rationality_report, deviation_gain, net_cost, AllocationGame, AuditReport,
    AuditRow, BudgetReport, ConsensusGame, Game, Settlement,
};
pub use consensus::{
    beta_bound, consensus_distance, consensus_step, penalty_tax_consensus, run_consensus, spectral_params,
    ConsensusConfig, ConsensusProblem, ConsensusRule, ConsensusRun, SpectralParams, TreeGraph,
};
pub use dual::{
    best_response, exact_kkt_solve, price_update, run_primal_dual, solve_marginal, DualIterationConfig,
    IterationStep, IterationTrace, KktSolution, MarginalMode, MarginalSolution,
};
pub use error::{MechanismError, Result};
pub use price_path::{clearing_price_curve, integrate_vcg, price_path_tax, PricePath, PriceSample, Quadrature};
pub use problem::{
    affine_projection, distance_to_feasible, social_cost, validate_problem, AffineSet, AllocationProblem,
    Interval, QuadraticCost, TypeSpaceBounds, ValidationReport, Violation,
};
pub use scalar::{Scalar, Tolerances};
pub use strategy::Strategy;
pub use tax::{
    clearing_price_tax, groves_tax, penalty_constant, run_distributed_vcg, run_mechanism, vcg_tax,
    GeometricThreshold, MechanismRun, TaxRule,
};

pub type QuadraticCost64 = QuadraticCost<f64>;
pub type AllocationProblem64 = AllocationProblem<f64>;
pub type Strategy64 = Strategy<f64>;
pub type DualIterationConfig64 = DualIterationConfig<f64>;
pub type IterationTrace64 = IterationTrace<f64>;
pub type TaxRule64 = TaxRule<f64>;
pub type MechanismRun64 = MechanismRun<f64>;
pub type PricePath64 = PricePath<f64>;
pub type ConsensusProblem64 = ConsensusProblem<f64>;
pub type ConsensusRun64 = ConsensusRun<f64>;
pub type TypeSpaceBounds64 = TypeSpaceBounds<f64>;
pub type AuditReport64 = AuditReport<f64>;
