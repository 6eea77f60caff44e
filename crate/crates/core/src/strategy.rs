//! Follower behaviours: the faithful program plus a finite library of
//! deviations used by the auditor.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::dual::best_response;
use crate::error::{MechanismError, Result};
use crate::problem::QuadraticCost;
use crate::scalar::{to_f64, Scalar};

/// What a follower actually runs during a mechanism.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy<T: Scalar> {
    /// Executes the announced algorithm with its true type.
    Faithful,
    /// Submits the same bid every round. In consensus, holds this position.
    FixedBid(DVector<T>),
    /// Best-responds as if its cost were the given one. In consensus, starts
    /// from that cost's minimizer instead of its true position.
    MisreportedType(QuadraticCost<T>),
    /// Never updates: keeps its round-one bid, or its initial position.
    Stationary,
    /// Behaves faithfully but adds an offset to every reported value.
    MisreportValue(T),
}

impl<T: Scalar> Strategy<T> {
    pub fn is_faithful(&self) -> bool {
        matches!(self, Strategy::Faithful)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Strategy::Faithful => "faithful",
            Strategy::FixedBid(_) => "fixed-bid",
            Strategy::MisreportedType(_) => "misreported-type",
            Strategy::Stationary => "stationary",
            Strategy::MisreportValue(_) => "misreport-value",
        }
    }

    /// Value the follower reports when its true cost at the decision is
    /// `true_value`.
    pub fn report(&self, true_value: T) -> T {
        match self {
            Strategy::MisreportValue(offset) => true_value + *offset,
            _ => true_value,
        }
    }

    /// Checks the strategy is well formed for a block of dimension `dim`.
    pub fn check(&self, follower: usize, dim: usize) -> Result<()> {
        match self {
            Strategy::FixedBid(bid) if bid.len() != dim => Err(MechanismError::BadBid {
                follower,
                expected: dim,
                actual: bid.len(),
            }),
            Strategy::MisreportedType(cost) => {
                if cost.dim() != dim {
                    return Err(MechanismError::BadBid {
                        follower,
                        expected: dim,
                        actual: cost.dim(),
                    });
                }
                if cost.minimizer().is_none() {
                    return Err(MechanismError::NotStrictlyConvex { follower });
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Bid submitted in a dual-decomposition round given the price
    /// broadcast from the previous round.
    pub(crate) fn bid(
        &self,
        follower: usize,
        true_cost: &QuadraticCost<T>,
        r_block: &DMatrix<T>,
        price: &DVector<T>,
        initial_price: &DVector<T>,
    ) -> Result<DVector<T>> {
        let bid = match self {
            Strategy::Faithful | Strategy::MisreportValue(_) => {
                best_response(true_cost, r_block, price)
            }
            Strategy::FixedBid(b) => Ok(b.clone()),
            Strategy::MisreportedType(fake) => best_response(fake, r_block, price),
            Strategy::Stationary => best_response(true_cost, r_block, initial_price),
        }
        .map_err(|e| match e {
            MechanismError::SingularCurvature => MechanismError::NotStrictlyConvex { follower },
            other => other,
        })?;
        if bid.len() != true_cost.dim() {
            return Err(MechanismError::BadBid {
                follower,
                expected: true_cost.dim(),
                actual: bid.len(),
            });
        }
        Ok(bid)
    }
}

impl<T: Scalar> fmt::Display for Strategy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vec = |v: &DVector<T>| {
            v.iter()
                .map(|x| format!("{}", to_f64(*x)))
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            Strategy::FixedBid(b) => write!(f, "fixed-bid[{}]", vec(b)),
            Strategy::MisreportedType(c) => write!(
                f,
                "misreported-type[Q={}|b={}|c0={}]",
                c.curvature()
                    .iter()
                    .map(|x| format!("{}", to_f64(*x)))
                    .collect::<Vec<_>>()
                    .join(","),
                vec(c.linear()),
                to_f64(c.offset())
            ),
            Strategy::MisreportValue(o) => write!(f, "misreport-value[{}]", to_f64(*o)),
            other => f.write_str(other.kind()),
        }
    }
}
