use serde::{Deserialize, Serialize};

use super::{fit_loss_scaling, FitMethod, InstanceFit, L0Mode, ScalingPoint};
use crate::error::{Error, Result};
use crate::estimator::PassUntilEstimate;
use crate::scalar::Scalar;

/// Ground-truth loss of an instance paired with its measured PU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPuPair<T = f64> {
    pub loss: T,
    pub pu: T,
    pub censored: bool,
    pub k_max: u64,
}

impl LossPuPair<f64> {
    pub fn from_estimate(loss: f64, est: &PassUntilEstimate) -> Self {
        LossPuPair {
            loss,
            pu: est.pu,
            censored: est.censored,
            k_max: est.k_max,
        }
    }
}

/// `-log PU = k L`, a line through the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPuRelation<T = f64> {
    pub k: T,
    pub residual_sum_squares: T,
    pub n_pairs: usize,
    pub n_excluded: usize,
}

impl<T: Scalar> LossPuRelation<T> {
    pub fn pu_at_loss(&self, loss: T) -> T {
        (-self.k * loss).exp()
    }
}

/// Slope of `-log PU` against loss through the origin, fitted on "easy"
/// pairs only: uncensored, `0 < pu < 1`, and `pu >= floor`. The default
/// floor is `10 / k_max` of each pair.
pub fn fit_loss_pu_relation<T: Scalar>(pairs: &[LossPuPair<T>], floor: Option<T>) -> Result<LossPuRelation<T>> {
    let easy: Vec<(T, T)> = pairs
        .iter()
        .filter(|p| {
            let floor = floor.unwrap_or_else(|| T::lit(10.0) / T::from_u64(p.k_max.max(1)).unwrap());
            !p.censored && p.pu > T::zero() && p.pu < T::one() && p.pu >= floor && p.loss >= T::zero()
        })
        .map(|p| (p.loss, -p.pu.ln()))
        .collect();
    if easy.is_empty() {
        return Err(Error::insufficient(1, 0, "loss-PU relation (no easy uncensored pairs)"));
    }
    let sxx: T = easy.iter().map(|&(l, _)| l * l).sum();
    let sxy: T = easy.iter().map(|&(l, y)| l * y).sum();
    let k = sxy / sxx;
    if !(k > T::zero()) || !k.is_finite() {
        return Err(Error::DegenerateFit(format!("loss-PU slope {k} is not positive")));
    }
    let rss = easy
        .iter()
        .map(|&(l, y)| {
            let r = y - k * l;
            r * r
        })
        .sum();
    Ok(LossPuRelation {
        k,
        residual_sum_squares: rss,
        n_pairs: easy.len(),
        n_excluded: pairs.len() - easy.len(),
    })
}

fn loss_points<T: Scalar>(series: &[(T, T)]) -> Result<Vec<ScalingPoint<T>>> {
    if series.len() < 3 {
        return Err(Error::insufficient(3, series.len(), "loss-assisted prediction needs losses at 3 sizes"));
    }
    Ok(series.iter().map(|&(n, l)| ScalingPoint::new(n, l)).collect())
}

/// Extrapolates an instance's loss `c N^-alpha` (irreducible part fixed at
/// zero) to `target_n` and maps it to PU through `relation`.
pub fn loss_assisted_prediction<T: Scalar>(
    series: &[(T, T)],
    relation: &LossPuRelation<T>,
    target_n: T,
) -> Result<T> {
    let points = loss_points(series)?;
    if points.iter().all(|p| p.value == T::zero()) {
        return Ok(T::one());
    }
    let fit = fit_loss_scaling(&points, L0Mode::Fixed(T::zero()))?;
    Ok(relation.pu_at_loss(fit.predict(target_n)))
}

/// The same composition expressed as a task law: `-log PU = k c N^-alpha`,
/// so `c_s = k c` and `alpha_s = alpha`.
pub fn loss_assisted_instance_fit<T: Scalar>(
    instance_id: &str,
    series: &[(T, T)],
    relation: &LossPuRelation<T>,
) -> Result<InstanceFit<T>> {
    let points = loss_points(series)?;
    if points.iter().all(|p| p.value == T::zero()) {
        return Err(Error::DegenerateFit(format!(
            "instance {instance_id} has zero loss at every size"
        )));
    }
    let fit = fit_loss_scaling(&points, L0Mode::Fixed(T::zero()))?;
    Ok(InstanceFit {
        instance_id: instance_id.to_string(),
        c_s: relation.k * fit.c,
        alpha_s: fit.alpha,
        method: FitMethod::LossAssisted,
        n_points: points.len(),
    })
}
