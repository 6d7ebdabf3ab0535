//! Smooth minimum of circuit lines, fitted to a growth curve.
//!
//! Each circuit contributes a line `l_i = log c_i - alpha_i log N`. The
//! fitted curve is `sum_i w_i l_i` with `w = softmax(-l / temperature)`,
//! which tends to `min_i l_i` as the temperature goes to zero.

use serde::{Deserialize, Serialize};

use super::curve::GrowthCurve;
use crate::error::{Error, Result};
use crate::optim::{levenberg_marquardt, LeastSquaresProblem, LmOptions};
use crate::oracles::SyntheticLaw;
use crate::scalar::Scalar;
use crate::scaling::task::fit_line;

/// Which sign convention the smooth minimum is fitted in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SoftMinForm {
    /// `F = sum_i w_i (log c_i - alpha_i log N)`, which reduces to the hard
    /// minimum of the circuit lines.
    #[default]
    Minimum,
    /// `F = sum_i w_i (alpha_i log N - log c_i)` with the same weights,
    /// i.e. the negated curve. Exponents come out negative on ordinary data
    /// and are left unconstrained.
    Negated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftMinOptions<T = f64> {
    pub temperature: T,
    pub form: SoftMinForm,
    pub n_circuits: usize,
}

impl<T: Scalar> Default for SoftMinOptions<T> {
    fn default() -> Self {
        SoftMinOptions {
            temperature: T::one(),
            form: SoftMinForm::Minimum,
            n_circuits: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftMinFit<T = f64> {
    /// Circuits in order of increasing exponent.
    pub circuits: Vec<SyntheticLaw<T>>,
    pub temperature: T,
    pub form: SoftMinForm,
    pub residual_sum_squares: T,
    /// No start converged; the best iterate is reported.
    pub degraded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoCircuitFit<T = f64> {
    pub c1: T,
    pub alpha1: T,
    pub c2: T,
    pub alpha2: T,
    pub temperature: T,
    pub form: SoftMinForm,
    pub residual_sum_squares: T,
    pub degraded: bool,
}

impl<T: Scalar> TwoCircuitFit<T> {
    pub fn circuits(&self) -> [SyntheticLaw<T>; 2] {
        [
            SyntheticLaw { c: self.c1, alpha: self.alpha1 },
            SyntheticLaw { c: self.c2, alpha: self.alpha2 },
        ]
    }

    pub fn predict(&self, log_n: T) -> T {
        soft_min_value(&self.circuits(), log_n, self.temperature, self.form)
    }
}

impl<T: Scalar> SoftMinFit<T> {
    pub fn predict(&self, log_n: T) -> T {
        soft_min_value(&self.circuits, log_n, self.temperature, self.form)
    }
}

/// Softmax weights `softmax(-l / temperature)` and the weighted sum.
fn weights_and_value<T: Scalar>(lines: &[T], temperature: T, w: &mut [T]) -> T {
    let lo = lines.iter().copied().fold(T::infinity(), T::min);
    let mut total = T::zero();
    for (wi, &l) in w.iter_mut().zip(lines) {
        *wi = (-(l - lo) / temperature).exp();
        total = total + *wi;
    }
    let mut value = T::zero();
    for (wi, &l) in w.iter_mut().zip(lines) {
        *wi = *wi / total;
        value = value + *wi * l;
    }
    value
}

/// Evaluates the smooth minimum of `circuits` at `log_n`.
pub fn soft_min_value<T: Scalar>(circuits: &[SyntheticLaw<T>], log_n: T, temperature: T, form: SoftMinForm) -> T {
    let lines: Vec<T> = circuits
        .iter()
        .map(|c| c.c.ln() - c.alpha * log_n)
        .collect();
    let mut w = vec![T::zero(); lines.len()];
    let v = weights_and_value(&lines, temperature, &mut w);
    match form {
        SoftMinForm::Minimum => v,
        SoftMinForm::Negated => -v,
    }
}

/// Weights of each circuit at `log_n`.
pub fn soft_min_weights<T: Scalar>(circuits: &[SyntheticLaw<T>], log_n: T, temperature: T) -> Vec<T> {
    let lines: Vec<T> = circuits
        .iter()
        .map(|c| c.c.ln() - c.alpha * log_n)
        .collect();
    let mut w = vec![T::zero(); lines.len()];
    weights_and_value(&lines, temperature, &mut w);
    w
}

/// Parameters are `[log c_1, alpha_1, log c_2, alpha_2, ...]`, fitted to
/// the (possibly negated) curve values.
struct SoftMinProblem<'a, T> {
    x: &'a [T],
    target: Vec<T>,
    temperature: T,
    k: usize,
    constrain_alpha: bool,
}

impl<T: Scalar> SoftMinProblem<'_, T> {
    fn lines(&self, p: &[T], x: T, out: &mut [T]) {
        for i in 0..self.k {
            out[i] = p[2 * i] - p[2 * i + 1] * x;
        }
    }
}

impl<T: Scalar> LeastSquaresProblem<T> for SoftMinProblem<'_, T> {
    fn n_params(&self) -> usize {
        2 * self.k
    }

    fn n_residuals(&self) -> usize {
        self.x.len()
    }

    fn residuals(&self, p: &[T], out: &mut [T]) {
        let mut l = vec![T::zero(); self.k];
        let mut w = vec![T::zero(); self.k];
        for (j, &x) in self.x.iter().enumerate() {
            self.lines(p, x, &mut l);
            out[j] = weights_and_value(&l, self.temperature, &mut w) - self.target[j];
        }
    }

    fn jacobian(&self, p: &[T], out: &mut [T]) {
        let n = 2 * self.k;
        let mut l = vec![T::zero(); self.k];
        let mut w = vec![T::zero(); self.k];
        for (j, &x) in self.x.iter().enumerate() {
            self.lines(p, x, &mut l);
            let v = weights_and_value(&l, self.temperature, &mut w);
            for i in 0..self.k {
                let dl = w[i] * (T::one() - (l[i] - v) / self.temperature);
                out[j * n + 2 * i] = dl;
                out[j * n + 2 * i + 1] = -dl * x;
            }
        }
    }

    fn project(&self, p: &mut [T]) {
        if self.constrain_alpha {
            for i in 0..self.k {
                p[2 * i + 1] = p[2 * i + 1].max(T::zero());
            }
        }
    }
}

/// Starting points: the linear fit duplicated, pairs of perturbed slopes
/// crossing at several places, and lines through the two ends of the curve.
fn starts<T: Scalar>(x: &[T], y: &[T], k: usize) -> Result<Vec<Vec<T>>> {
    let line = fit_line(x, y, None)?;
    let alpha = -line.slope;
    let value_at = |x0: T| line.intercept + line.slope * x0;
    let mut out = Vec::new();
    let spread = |i: usize| T::lit(2.0 * i as f64 / (k - 1).max(1) as f64 - 1.0);

    out.push((0..k).flat_map(|_| [line.intercept, alpha]).collect());
    let x_lo = x[0];
    let x_hi = x[x.len() - 1];
    for &q in &[0.25, 0.5, 0.75] {
        let x0 = x_lo + (x_hi - x_lo) * T::lit(q);
        for &delta in &[0.25, 0.5, 0.9] {
            let start = (0..k)
                .flat_map(|i| {
                    let a = alpha * (T::one() + T::lit(delta) * spread(i));
                    [value_at(x0) + a * x0, a]
                })
                .collect();
            out.push(start);
        }
    }

    let m = x.len();
    let ends = [(0, (m / 2).max(2)), (m - (m / 2).max(2), m), (0, 2), (m - 2, m)];
    let segment = |lo: usize, hi: usize| fit_line(&x[lo..hi], &y[lo..hi], None).ok();
    if let (Some(a), Some(b)) = (segment(ends[0].0, ends[0].1), segment(ends[1].0, ends[1].1)) {
        out.push(pair_start(&a, &b, k));
    }
    if let (Some(a), Some(b)) = (segment(ends[2].0, ends[2].1), segment(ends[3].0, ends[3].1)) {
        out.push(pair_start(&a, &b, k));
    }
    Ok(out)
}

fn pair_start<T: Scalar>(a: &crate::scaling::task::LineFit<T>, b: &crate::scaling::task::LineFit<T>, k: usize) -> Vec<T> {
    (0..k)
        .flat_map(|i| {
            let t = T::lit(i as f64 / (k - 1).max(1) as f64);
            let slope = a.slope + (b.slope - a.slope) * t;
            let intercept = a.intercept + (b.intercept - a.intercept) * t;
            [intercept, -slope]
        })
        .collect()
}

/// Fits `options.n_circuits` circuit lines to `curve` by multi-start
/// Levenberg-Marquardt and keeps the best start.
pub fn fit_soft_min<T: Scalar>(curve: &GrowthCurve<T>, options: &SoftMinOptions<T>) -> Result<SoftMinFit<T>> {
    curve.validate()?;
    let k = options.n_circuits;
    if k < 1 {
        return Err(Error::InvalidConfig("at least one circuit is required".into()));
    }
    if !(options.temperature > T::zero() && options.temperature.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "temperature must be positive, got {}",
            options.temperature
        )));
    }
    let needed = (2 * k).max(4);
    if curve.points.len() < needed {
        return Err(Error::insufficient(needed, curve.points.len(), "soft-min fit"));
    }
    let x = curve.log_n();
    let sign = match options.form {
        SoftMinForm::Minimum => T::one(),
        SoftMinForm::Negated => -T::one(),
    };
    let target: Vec<T> = curve.points.iter().map(|p| sign * p.f).collect();
    let problem = SoftMinProblem {
        x: &x,
        target: target.clone(),
        temperature: options.temperature,
        k,
        constrain_alpha: options.form == SoftMinForm::Minimum,
    };
    let lm = LmOptions::default();
    let mut best: Option<(Vec<T>, T, bool)> = None;
    for start in starts(&x, &target, k)? {
        let report = levenberg_marquardt(&problem, &start, &lm);
        if !report.cost.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, cost, _)) => report.cost < *cost,
        };
        let any_converged = best.as_ref().is_some_and(|b| b.2) || report.converged;
        if better {
            best = Some((report.params, report.cost, any_converged));
        } else if let Some(b) = best.as_mut() {
            b.2 = any_converged;
        }
    }
    let (params, cost, converged) = best.ok_or_else(|| Error::DegenerateFit("soft-min fit diverged from every start".into()))?;
    let mut circuits: Vec<SyntheticLaw<T>> = (0..k)
        .map(|i| SyntheticLaw {
            c: params[2 * i].exp(),
            alpha: params[2 * i + 1],
        })
        .collect();
    circuits.sort_by(|a, b| a.alpha.partial_cmp(&b.alpha).unwrap_or(std::cmp::Ordering::Equal));
    Ok(SoftMinFit {
        circuits,
        temperature: options.temperature,
        form: options.form,
        residual_sum_squares: cost,
        degraded: !converged,
    })
}

/// Two-circuit smooth-minimum fit; see [`fit_soft_min`].
pub fn fit_two_circuit<T: Scalar>(curve: &GrowthCurve<T>, options: &SoftMinOptions<T>) -> Result<TwoCircuitFit<T>> {
    let options = SoftMinOptions { n_circuits: 2, ..*options };
    let fit = fit_soft_min(curve, &options)?;
    Ok(TwoCircuitFit {
        c1: fit.circuits[0].c,
        alpha1: fit.circuits[0].alpha,
        c2: fit.circuits[1].c,
        alpha2: fit.circuits[1].alpha,
        temperature: fit.temperature,
        form: fit.form,
        residual_sum_squares: fit.residual_sum_squares,
        degraded: fit.degraded,
    })
}
