//! Small dense nonlinear least squares (Levenberg-Marquardt) used by the
//! loss-law and soft-min fits. Problems here have at most a handful of
//! parameters, so normal equations with pivoted elimination are fine.

use crate::scalar::Scalar;

pub trait LeastSquaresProblem<T: Scalar> {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, params: &[T], out: &mut [T]);
    /// Row-major `n_residuals x n_params` Jacobian of the residuals.
    fn jacobian(&self, params: &[T], out: &mut [T]);
    /// Maps a trial point back into the feasible region.
    fn project(&self, _params: &mut [T]) {}
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions<T> {
    pub max_iterations: usize,
    /// Stop when the relative cost reduction of an accepted step is below this.
    pub ftol: T,
    /// Stop when the relative step length is below this.
    pub xtol: T,
    /// Stop when the infinity norm of the gradient is below this.
    pub gtol: T,
}

impl<T: Scalar> Default for LmOptions<T> {
    fn default() -> Self {
        let eps = T::epsilon();
        LmOptions {
            max_iterations: 500,
            ftol: eps * T::lit(16.0),
            xtol: eps * T::lit(16.0),
            gtol: T::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport<T> {
    pub params: Vec<T>,
    /// Sum of squared residuals at `params`.
    pub cost: T,
    pub iterations: usize,
    pub converged: bool,
}

fn sum_sq<T: Scalar>(r: &[T]) -> T {
    r.iter().map(|&x| x * x).sum()
}

/// Minimizes the sum of squared residuals starting from `start`.
pub fn levenberg_marquardt<T: Scalar, P: LeastSquaresProblem<T>>(
    problem: &P,
    start: &[T],
    opts: &LmOptions<T>,
) -> LmReport<T> {
    let n = problem.n_params();
    let m = problem.n_residuals();
    let mut x = start.to_vec();
    problem.project(&mut x);
    let mut r = vec![T::zero(); m];
    let mut jac = vec![T::zero(); m * n];
    problem.residuals(&x, &mut r);
    let mut cost = sum_sq(&r);
    let mut lambda = T::lit(1e-3);
    let mut trial = vec![T::zero(); n];
    let mut r_trial = vec![T::zero(); m];

    for iter in 0..opts.max_iterations {
        if !cost.is_finite() {
            return LmReport { params: x, cost, iterations: iter, converged: false };
        }
        problem.jacobian(&x, &mut jac);
        let mut jtj = vec![T::zero(); n * n];
        let mut jtr = vec![T::zero(); n];
        for row in 0..m {
            let jr = &jac[row * n..(row + 1) * n];
            for a in 0..n {
                jtr[a] = jtr[a] + jr[a] * r[row];
                for b in a..n {
                    jtj[a * n + b] = jtj[a * n + b] + jr[a] * jr[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                jtj[a * n + b] = jtj[b * n + a];
            }
        }
        let gnorm = jtr.iter().fold(T::zero(), |acc, g| acc.max(g.abs()));
        if gnorm <= opts.gtol || cost == T::zero() {
            return LmReport { params: x, cost, iterations: iter, converged: true };
        }

        loop {
            let mut a = jtj.clone();
            for d in 0..n {
                let diag = jtj[d * n + d].max(T::lit(1e-12));
                a[d * n + d] = a[d * n + d] + lambda * diag;
            }
            let rhs: Vec<T> = jtr.iter().map(|&g| -g).collect();
            let step = solve_dense(&mut a, rhs, n);
            let Some(step) = step else {
                lambda = lambda * T::lit(10.0);
                if lambda > T::lit(1e20) {
                    return LmReport { params: x, cost, iterations: iter, converged: false };
                }
                continue;
            };
            for i in 0..n {
                trial[i] = x[i] + step[i];
            }
            problem.project(&mut trial);
            problem.residuals(&trial, &mut r_trial);
            let new_cost = sum_sq(&r_trial);
            if new_cost.is_finite() && new_cost < cost {
                let step_norm = step.iter().fold(T::zero(), |acc, s| acc + *s * *s).sqrt();
                let x_norm = x.iter().fold(T::zero(), |acc, s| acc + *s * *s).sqrt();
                let reduction = (cost - new_cost) / cost;
                x.copy_from_slice(&trial);
                std::mem::swap(&mut r, &mut r_trial);
                cost = new_cost;
                lambda = (lambda / T::lit(3.0)).max(T::lit(1e-15));
                if reduction < opts.ftol || step_norm <= opts.xtol * (x_norm + opts.xtol) {
                    return LmReport { params: x, cost, iterations: iter + 1, converged: true };
                }
                break;
            }
            lambda = lambda * T::lit(4.0);
            if lambda > T::lit(1e20) {
                // no descent direction left at machine precision
                return LmReport { params: x, cost, iterations: iter + 1, converged: true };
            }
        }
    }
    LmReport { params: x, cost, iterations: opts.max_iterations, converged: false }
}

/// Solves `a x = b` for a row-major `n x n` matrix by Gaussian elimination
/// with partial pivoting. `None` when singular.
pub fn solve_dense<T: Scalar>(a: &mut [T], mut b: Vec<T>, n: usize) -> Option<Vec<T>> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i * n + col]
                .abs()
                .partial_cmp(&a[j * n + col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        let pv = a[pivot * n + col];
        if !(pv.abs() > T::min_positive_value()) || !pv.is_finite() {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                a[row * n + k] = a[row * n + k] - f * a[col * n + k];
            }
            b[row] = b[row] - f * b[col];
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s = s - a[row * n + k] * x[k];
        }
        x[row] = s / a[row * n + row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
