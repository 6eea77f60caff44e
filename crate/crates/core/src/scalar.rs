//! Scalar abstraction shared by every numeric routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the mechanisms are generic over (`f32` or `f64`).
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Lossy view of a scalar as `f64`, for reporting.
#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Numerical tolerances used by validation and feasibility checks.
///
/// Defaults are `1e-9` for feasibility decisions and `1e-12` for exactness
/// checks, floored at a small multiple of machine epsilon so the same
/// defaults stay meaningful for `f32`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances<T> {
    pub feasibility: T,
    pub exactness: T,
}

impl<T: Scalar> Default for Tolerances<T> {
    fn default() -> Self {
        let eps = T::default_epsilon();
        Tolerances {
            feasibility: lit::<T>(1e-9).max(eps * lit(100.0)),
            exactness: lit::<T>(1e-12).max(eps * lit(10.0)),
        }
    }
}
