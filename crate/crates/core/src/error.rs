use thiserror::Error;

use crate::problem::Violation;

/// Errors raised by the mechanism library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("constraint matrix is rank deficient (rank {rank} < {rows} rows); remove redundant rows before solving")]
    RankDeficient { rank: usize, rows: usize },

    #[error("cost of follower {follower} is not strictly convex")]
    NotStrictlyConvex { follower: usize },

    #[error("cost curvature is singular; best response undefined")]
    SingularCurvature,

    #[error("KKT system is singular")]
    SingularKkt,

    #[error("marginal problem without follower {follower} is infeasible: reduced constraint rank {rank} < {rows}")]
    InfeasibleMarginal {
        follower: usize,
        rank: usize,
        rows: usize,
    },

    #[error("marginal problem for follower {follower} infeasible at path point t = {t}")]
    InfeasiblePin { follower: usize, t: f64 },

    #[error("follower {follower} emitted a bid of dimension {actual}, expected {expected}")]
    BadBid {
        follower: usize,
        expected: usize,
        actual: usize,
    },

    #[error("expected one strategy per follower ({expected}), got {actual}")]
    StrategyCount { expected: usize, actual: usize },

    #[error("follower index {index} out of range for {count} followers")]
    FollowerIndex { index: usize, count: usize },

    #[error("type-space bounds are missing or unbounded: {0}")]
    UnboundedTypes(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("problem failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
}

pub type Result<T, E = MechanismError> = std::result::Result<T, E>;
