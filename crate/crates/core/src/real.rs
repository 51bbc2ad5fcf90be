//! Scalar abstraction for times, probabilities and weights.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar used for times (minutes), probabilities and weights.
///
/// Implemented for `f32` and `f64`. All model arithmetic is written against
/// this trait so a model can be evaluated at either precision.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Tolerance used when checking that probabilities sum to one.
    fn sum_tolerance() -> Self {
        let floor = Self::epsilon() * Self::of(64.0);
        Self::of(1e-9).max(floor)
    }

    /// Converts an `f64` literal. Panics only if the target cannot represent
    /// finite `f64` values, which never happens for `f32`/`f64`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal fits the scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_scales_with_precision() {
        assert_eq!(f64::sum_tolerance(), 1e-9);
        assert!(f32::sum_tolerance() > 1e-6);
    }
}
