//! Scaling-law fits: the task law `PU(N) = exp(-c N^-alpha)` at dataset
//! and instance level, the loss law `L(N) = c N^-alpha + L0`, and the
//! loss-to-PU relation used for instances too hard to measure directly.
//!
//! All logarithms are natural. `N` is the raw non-embedding parameter
//! count; `c` is therefore tied to that unit.

mod loss;
mod relation;
pub(crate) mod task;

pub use loss::{fit_loss_scaling, loss_objective, L0Mode, LossScalingFit};
pub use relation::{
    fit_loss_pu_relation, loss_assisted_instance_fit, loss_assisted_prediction, LossPuPair,
    LossPuRelation,
};
pub use task::{
    aggregate_instances, fit_instance, fit_task_scaling, fit_task_scaling_with, predict_pu,
    relative_deviation, FitMethod, InstanceFit, TaskFitOptions, TaskScalingFit, Weighting,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One observation of PU or loss at model size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint<T = f64> {
    pub n: T,
    pub value: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<T>,
    #[serde(default)]
    pub censored: bool,
}

impl<T: Scalar> ScalingPoint<T> {
    pub fn new(n: T, value: T) -> Self {
        ScalingPoint {
            n,
            value,
            se: None,
            censored: false,
        }
    }

    pub fn with_se(mut self, se: T) -> Self {
        self.se = Some(se);
        self
    }

    pub fn censored(mut self, censored: bool) -> Self {
        self.censored = censored;
        self
    }
}

/// `log(-log pu)`.
pub fn f_transform<T: Scalar>(pu: T) -> Result<T> {
    if !(pu > T::zero() && pu < T::one()) {
        return Err(Error::domain(format!(
            "f_transform needs 0 < pu < 1, got {pu}"
        )));
    }
    Ok((-pu.ln()).ln())
}

/// Standard error of `f_transform(pu)` from the standard error of `pu`
/// by the delta method: `|dF/dpu| = 1 / (pu |log pu|)`.
pub fn f_transform_se<T: Scalar>(pu: T, pu_se: T) -> T {
    pu_se / (pu * pu.ln().abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_transform_values() {
        assert!(f_transform((-1.0f64).exp()).unwrap().abs() < 1e-15);
        let e = std::f64::consts::E;
        assert!((f_transform((-e).exp()).unwrap() - 1.0).abs() < 1e-15);
        // 50-digit reference: log(-log(0.008125)) = 1.571281...
        let v = f_transform(0.008125f64).unwrap();
        assert!((v - 1.571_281_019_782_476_9).abs() < 1e-12, "{v}");
        assert!(f_transform(0.0f64).is_err());
        assert!(f_transform(1.0f64).is_err());
    }

    #[test]
    fn f_transform_decreasing() {
        let grid: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).collect();
        for w in grid.windows(2) {
            assert!(f_transform(w[0]).unwrap() > f_transform(w[1]).unwrap());
        }
    }
}
