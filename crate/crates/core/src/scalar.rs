//! Scalar abstractions shared by the matrix code and the estimators.
//!
//! Structural computations (incidence matrices, ranks, reduced systems) only
//! need field arithmetic and run on `f32`, `f64` or exact rationals.
//! Estimation needs real-valued functions and is restricted to [`Real`].

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, Signed, ToPrimitive};

/// A field element usable in dense elimination.
pub trait Scalar:
    Num + Signed + Clone + PartialOrd + Debug + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Magnitude below which a pivot is treated as zero, relative to `scale`.
    ///
    /// Exact types return zero so that only true zeros are rejected.
    fn pivot_tolerance(scale: &Self) -> Self;

    fn from_i32(v: i32) -> Self {
        <Self as FromPrimitive>::from_i32(v).expect("small integers are representable")
    }
}

macro_rules! float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn pivot_tolerance(scale: &Self) -> Self {
                // A few hundred ulps of the largest entry.
                <$t>::EPSILON * 256.0 * scale.abs().max(1.0)
            }
        }
    };
}

float_scalar!(f32);
float_scalar!(f64);

impl Scalar for Ratio<i64> {
    fn pivot_tolerance(_scale: &Self) -> Self {
        Ratio::from_integer(0)
    }
}

/// Floating point scalar used by the estimators and the QP solver.
pub trait Real: Scalar + Float {
    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 is representable")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_tolerance_is_zero() {
        let t = <Ratio<i64> as Scalar>::pivot_tolerance(&Ratio::from_integer(1000));
        assert_eq!(t, Ratio::from_integer(0));
    }

    #[test]
    fn float_tolerance_scales() {
        let small = <f64 as Scalar>::pivot_tolerance(&1.0);
        let big = <f64 as Scalar>::pivot_tolerance(&1.0e6);
        assert!(small > 0.0 && big > small);
    }
}
