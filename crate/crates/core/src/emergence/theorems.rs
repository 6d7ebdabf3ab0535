//! Exact reference curves for composed tasks. A task that needs every one
//! of several steps to pass has a convex `F`; a task that any one of
//! several circuits can solve has a concave `F`.

use serde::{Deserialize, Serialize};

use super::curve::{second_differences_of, GrowthCurve};
use crate::error::{Error, Result};
use crate::oracles::SyntheticLaw;
use crate::scalar::Scalar;

/// Tolerance on second differences when checking curvature signs.
pub const CURVATURE_TOLERANCE: f64 = 1e-9;

/// Result of [`theorem2_oracle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStepCheck<T = f64> {
    pub curve: GrowthCurve<T>,
    pub second_differences: Vec<T>,
    pub all_second_differences_nonnegative: bool,
    /// All exponents equal: the curve is a line.
    pub equality_case: bool,
}

/// Result of [`theorem3_oracle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiCircuitCheck<T = f64> {
    pub curve: GrowthCurve<T>,
    pub second_differences: Vec<T>,
    pub all_second_differences_nonpositive: bool,
    /// All exponents equal: the curve is a line.
    pub equality_case: bool,
}

fn check_inputs<T: Scalar>(laws: &[SyntheticLaw<T>], grid: &[T]) -> Result<()> {
    if laws.is_empty() {
        return Err(Error::InvalidConfig("at least one component law is required".into()));
    }
    for law in laws {
        law.validate()?;
    }
    if grid.len() < 3 {
        return Err(Error::insufficient(3, grid.len(), "curvature grid"));
    }
    if grid.iter().any(|&n| !(n > T::zero() && n.is_finite())) {
        return Err(Error::domain("model sizes must be positive and finite"));
    }
    Ok(())
}

/// `F` for a task whose steps must all pass: `log sum_i c_i N^-alpha_i`,
/// computed with log-sum-exp.
pub fn multi_step_f<T: Scalar>(steps: &[SyntheticLaw<T>], log_n: T) -> T {
    let terms: Vec<T> = steps.iter().map(|s| s.f_value(log_n)).collect();
    let m = terms.iter().copied().fold(T::neg_infinity(), T::max);
    m + terms.iter().map(|&t| (t - m).exp()).sum::<T>().ln()
}

/// `F` for a task any one circuit can solve: `min_i (log c_i - alpha_i log N)`.
pub fn multi_circuit_f<T: Scalar>(circuits: &[SyntheticLaw<T>], log_n: T) -> T {
    circuits
        .iter()
        .map(|s| s.f_value(log_n))
        .fold(T::infinity(), T::min)
}

fn evaluate<T: Scalar>(
    laws: &[SyntheticLaw<T>],
    n_grid: &[T],
    f: impl Fn(&[SyntheticLaw<T>], T) -> T,
    source: &str,
) -> Result<(GrowthCurve<T>, Vec<T>, bool)> {
    check_inputs(laws, n_grid)?;
    let mut x: Vec<T> = n_grid.iter().map(|n| n.ln()).collect();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pairs: Vec<(T, T)> = x.iter().map(|&x| (x, f(laws, x))).collect();
    let curve = GrowthCurve::from_pairs(&pairs, source)?;
    let fs: Vec<T> = pairs.iter().map(|p| p.1).collect();
    let d = second_differences_of(&x, &fs)?;
    let equal = laws.iter().all(|l| l.alpha == laws[0].alpha);
    Ok((curve, d, equal))
}

/// Evaluates the multi-step curve `F` exactly on the model sizes `n_grid`
/// and checks it is convex in `log n`.
pub fn theorem2_oracle<T: Scalar>(steps: &[SyntheticLaw<T>], n_grid: &[T]) -> Result<MultiStepCheck<T>> {
    let (curve, d, equality_case) = evaluate(steps, n_grid, multi_step_f, "multi-step")?;
    let tol = T::lit(CURVATURE_TOLERANCE);
    Ok(MultiStepCheck {
        all_second_differences_nonnegative: d.iter().all(|&v| v >= -tol),
        curve,
        second_differences: d,
        equality_case,
    })
}

/// Evaluates the multi-circuit curve `F` exactly on `n_grid` and checks it
/// is concave in `log n`.
pub fn theorem3_oracle<T: Scalar>(circuits: &[SyntheticLaw<T>], n_grid: &[T]) -> Result<MultiCircuitCheck<T>> {
    let (curve, d, equality_case) = evaluate(circuits, n_grid, multi_circuit_f, "multi-circuit")?;
    let tol = T::lit(CURVATURE_TOLERANCE);
    Ok(MultiCircuitCheck {
        all_second_differences_nonpositive: d.iter().all(|&v| v <= tol),
        curve,
        second_differences: d,
        equality_case,
    })
}
