use serde::{Deserialize, Serialize};

use super::ScalingPoint;
use crate::error::{Error, Result};
use crate::optim::{levenberg_marquardt, LeastSquaresProblem, LmOptions};
use crate::scalar::Scalar;

/// Treatment of the irreducible loss term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L0Mode<T> {
    /// Fitted, constrained to be nonnegative.
    Free,
    Fixed(T),
}

/// Fitted `L(N) = c N^-alpha + l0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossScalingFit<T = f64> {
    pub c: T,
    pub alpha: T,
    pub l0: T,
    pub residual_sum_squares: T,
    pub n_points: usize,
    /// Local refinement failed; parameters are the best grid cell.
    pub degraded: bool,
}

impl<T: Scalar> LossScalingFit<T> {
    pub fn predict(&self, n: T) -> T {
        self.c * (-self.alpha * n.ln()).exp() + self.l0
    }
}

/// Sum of squared residuals of `c n^-alpha + l0` and its gradient with
/// respect to `(c, alpha, l0)`.
pub fn loss_objective<T: Scalar>(points: &[ScalingPoint<T>], c: T, alpha: T, l0: T) -> (T, [T; 3]) {
    let two = T::lit(2.0);
    let mut value = T::zero();
    let mut grad = [T::zero(); 3];
    for p in points {
        let ln_n = p.n.ln();
        let x = (-alpha * ln_n).exp();
        let r = c * x + l0 - p.value;
        value = value + r * r;
        grad[0] = grad[0] + two * r * x;
        grad[1] = grad[1] - two * r * c * x * ln_n;
        grad[2] = grad[2] + two * r;
    }
    (value, grad)
}

/// Parameters `[log c', alpha, (l0)]` with `c' = c n_ref^-alpha`, so the
/// model is `exp(log c' - alpha u) + l0` with `u = log(n / n_ref)`.
struct LossProblem<T> {
    u: Vec<T>,
    y: Vec<T>,
    fixed_l0: Option<T>,
}

impl<T: Scalar> LossProblem<T> {
    fn l0(&self, p: &[T]) -> T {
        self.fixed_l0.unwrap_or_else(|| p[2])
    }
}

const MAX_ALPHA: f64 = 50.0;

impl<T: Scalar> LeastSquaresProblem<T> for LossProblem<T> {
    fn n_params(&self) -> usize {
        if self.fixed_l0.is_some() {
            2
        } else {
            3
        }
    }

    fn n_residuals(&self) -> usize {
        self.u.len()
    }

    fn residuals(&self, p: &[T], out: &mut [T]) {
        let l0 = self.l0(p);
        for i in 0..self.u.len() {
            out[i] = (p[0] - p[1] * self.u[i]).exp() + l0 - self.y[i];
        }
    }

    fn jacobian(&self, p: &[T], out: &mut [T]) {
        let k = self.n_params();
        for i in 0..self.u.len() {
            let e = (p[0] - p[1] * self.u[i]).exp();
            out[i * k] = e;
            out[i * k + 1] = -self.u[i] * e;
            if k == 3 {
                out[i * k + 2] = T::one();
            }
        }
    }

    fn project(&self, p: &mut [T]) {
        p[1] = p[1].max(T::lit(1e-9)).min(T::lit(MAX_ALPHA));
        if self.fixed_l0.is_none() {
            p[2] = p[2].max(T::zero());
        }
    }
}

fn grid<T: Scalar>(lo: f64, hi: f64, steps: usize, log: bool) -> Vec<T> {
    (0..steps)
        .map(|i| {
            let t = i as f64 / (steps - 1) as f64;
            let v = if log {
                (lo.ln() + t * (hi.ln() - lo.ln())).exp()
            } else {
                lo + t * (hi - lo)
            };
            T::lit(v)
        })
        .collect()
}

/// Least-squares fit of the loss law.
///
/// Starts from the best cell of a grid over `alpha` (and `l0` when free)
/// with `c` in closed form per cell, then refines with Levenberg-Marquardt
/// keeping `l0 >= 0`. If refinement fails the grid optimum is returned with
/// `degraded` set.
pub fn fit_loss_scaling<T: Scalar>(points: &[ScalingPoint<T>], mode: L0Mode<T>) -> Result<LossScalingFit<T>> {
    let needed = match mode {
        L0Mode::Free => 3,
        L0Mode::Fixed(_) => 2,
    };
    if points.len() < needed {
        return Err(Error::insufficient(needed, points.len(), "loss scaling fit"));
    }
    for p in points {
        if !(p.n > T::zero()) || !(p.value >= T::zero()) || !p.value.is_finite() {
            return Err(Error::domain(format!(
                "loss point (n={}, loss={}) needs n > 0 and finite loss >= 0",
                p.n, p.value
            )));
        }
    }
    let ln_n: Vec<T> = points.iter().map(|p| p.n.ln()).collect();
    let ln_ref = ln_n.iter().copied().sum::<T>() / T::from_usize_lossy(ln_n.len());
    let u: Vec<T> = ln_n.iter().map(|&l| l - ln_ref).collect();
    if u.iter().all(|&v| v == u[0]) {
        return Err(Error::DegenerateFit("loss fit needs distinct model sizes".into()));
    }
    let y: Vec<T> = points.iter().map(|p| p.value).collect();
    let y_min = y.iter().copied().fold(T::infinity(), T::min);

    let alphas: Vec<T> = grid(1e-3, 4.0, 160, true);
    let l0s: Vec<T> = match mode {
        L0Mode::Fixed(l0) => vec![l0],
        L0Mode::Free if y_min > T::zero() => grid(0.0, y_min.to_f64_lossy() * 0.999, 60, false),
        L0Mode::Free => vec![T::zero()],
    };

    let mut best: Option<(T, [T; 3])> = None;
    for &alpha in &alphas {
        let x: Vec<T> = u.iter().map(|&ui| (-alpha * ui).exp()).collect();
        let sxx: T = x.iter().map(|&v| v * v).sum();
        for &l0 in &l0s {
            let sxy: T = x.iter().zip(&y).map(|(&xi, &yi)| xi * (yi - l0)).sum();
            let c = sxy / sxx;
            if !(c > T::zero()) {
                continue;
            }
            let rss: T = x
                .iter()
                .zip(&y)
                .map(|(&xi, &yi)| {
                    let r = c * xi + l0 - yi;
                    r * r
                })
                .sum();
            if best.map_or(true, |(b, _)| rss < b) {
                best = Some((rss, [c.ln(), alpha, l0]));
            }
        }
    }
    let (grid_rss, grid_params) = best.ok_or_else(|| {
        Error::DegenerateFit("no positive coefficient fits the loss series".into())
    })?;

    let problem = LossProblem {
        u,
        y,
        fixed_l0: match mode {
            L0Mode::Fixed(v) => Some(v),
            L0Mode::Free => None,
        },
    };
    let start = &grid_params[..problem.n_params()];
    let report = levenberg_marquardt(&problem, start, &LmOptions::default());

    let finish = |params: &[T], rss: T, degraded: bool| {
        let alpha = params[1];
        let l0 = problem.l0(params);
        LossScalingFit {
            c: (params[0] + alpha * ln_ref).exp(),
            alpha,
            l0,
            residual_sum_squares: rss,
            n_points: points.len(),
            degraded,
        }
    };
    let refined_ok = report.converged
        && report.cost.is_finite()
        && report.cost <= grid_rss
        && report.params[1] > T::zero();
    if refined_ok {
        Ok(finish(&report.params, report.cost, false))
    } else {
        log::warn!("loss fit refinement did not converge; using best grid cell");
        Ok(finish(start, grid_rss, true))
    }
}
