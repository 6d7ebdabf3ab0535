//! Scalar abstraction shared by the fitting and curve-analysis code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point type the numerical modules are generic over.
///
/// Implemented for `f32` and `f64`. Everything that touches files or the
/// estimator works in `f64`; the fitting routines accept either.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for the implemented types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().copied().sum::<T>() / T::from_usize_lossy(xs.len()))
}

/// Sample standard deviation with the `n - 1` denominator. Zero for fewer
/// than two values.
pub fn sample_std<T: Scalar>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let m = mean(xs).unwrap();
    let ss: T = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    (ss / T::from_usize_lossy(xs.len() - 1)).sqrt()
}

/// Median of a slice of finite values; `None` when empty.
pub fn median<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        Some(v[mid])
    } else {
        Some((v[mid - 1] + v[mid]) / T::lit(2.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        assert_eq!(mean::<f64>(&[]), None);
        assert_eq!(mean(&[1.0f64, 2.0, 3.0]), Some(2.0));
        assert_eq!(median(&[3.0f32, 1.0, 2.0, 10.0]), Some(2.5));
        let s = sample_std(&[0.0f64, 1.0]);
        assert!((s - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(sample_std(&[4.0f64]), 0.0);
    }
}
