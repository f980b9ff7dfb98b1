//! Floating-point scalar abstraction shared by the geometry, model and metric code.
//!
//! Transcendental functions go through `libm` rather than the platform math
//! library so that inference used for entropy coding produces the same bits on
//! every target.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar type: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Platform-independent `exp`.
    fn exp_det(self) -> Self;
    /// Platform-independent natural logarithm.
    fn ln_det(self) -> Self;

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f32 {
    #[inline]
    fn exp_det(self) -> Self {
        libm::expf(self)
    }
    #[inline]
    fn ln_det(self) -> Self {
        libm::logf(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn exp_det(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn ln_det(self) -> Self {
        libm::log(self)
    }
}

/// Pairwise (cascade) summation; the reduction tree depends only on the length.
pub fn pairwise_sum<T: Scalar>(values: &[T]) -> T {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        let mut acc = T::zero();
        for &v in values {
            acc += v;
        }
        acc
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_exp_matches_std_closely() {
        for &x in &[-10.0f64, -1.0, 0.0, 0.5, 3.0] {
            assert!((x.exp_det() - x.exp()).abs() <= 1e-15 * x.exp().max(1.0));
        }
        assert_eq!(0.0f32.exp_det(), 1.0);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
        assert_eq!(pairwise_sum::<f32>(&[]), 0.0);
    }
}
