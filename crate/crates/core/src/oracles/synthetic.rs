//! Simulated pass/fail sources driven by task scaling laws.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{sha256_hex, SyntheticModel, TaskInstance, TaskOracle, TrialOutcome};
use crate::error::{Error, Result, TrialError};
use crate::scalar::Scalar;

/// Pass probability `exp(-c * n^(-alpha))` at non-embedding parameter
/// count `n` (raw count, not billions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLaw<T = f64> {
    pub c: T,
    pub alpha: T,
}

impl<T: Scalar> SyntheticLaw<T> {
    pub fn new(c: T, alpha: T) -> Result<Self> {
        let law = SyntheticLaw { c, alpha };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > T::zero() && self.c.is_finite()) {
            return Err(Error::domain(format!("law coefficient c={} must be positive", self.c)));
        }
        if !(self.alpha > T::zero() && self.alpha.is_finite()) {
            return Err(Error::domain(format!(
                "law exponent alpha={} must be positive",
                self.alpha
            )));
        }
        Ok(())
    }

    /// `-log p` at `n`, i.e. `c * n^(-alpha)`.
    pub fn neg_log_probability(&self, n: T) -> T {
        self.c * (-self.alpha * n.ln()).exp()
    }

    /// `log(-log p)` at `n`: the line `log c - alpha log n`.
    pub fn f_value(&self, log_n: T) -> T {
        self.c.ln() - self.alpha * log_n
    }
}

fn check_size<T: Scalar>(n: T) -> Result<()> {
    if n > T::zero() && !n.is_nan() {
        Ok(())
    } else {
        Err(Error::domain(format!("model size n={n} must be positive")))
    }
}

pub fn scaling_family_probability<T: Scalar>(law: &SyntheticLaw<T>, n: T) -> Result<T> {
    law.validate()?;
    check_size(n)?;
    Ok((-law.neg_log_probability(n)).exp())
}

/// Product of per-step pass probabilities.
pub fn multi_step_probability<T: Scalar>(steps: &[SyntheticLaw<T>], n: T) -> Result<T> {
    if steps.is_empty() {
        return Err(Error::domain("multi-step probability needs at least one step"));
    }
    steps
        .iter()
        .try_fold(T::one(), |acc, law| Ok(acc * scaling_family_probability(law, n)?))
}

/// Maximum over circuit pass probabilities.
pub fn multi_circuit_probability<T: Scalar>(circuits: &[SyntheticLaw<T>], n: T) -> Result<T> {
    if circuits.is_empty() {
        return Err(Error::domain("multi-circuit probability needs at least one circuit"));
    }
    circuits
        .iter()
        .try_fold(T::zero(), |acc, law| Ok(acc.max(scaling_family_probability(law, n)?)))
}

/// SplitMix64 output function.
#[inline]
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Maps a seed to a uniform value in `[0, 1)` with 53 bits of resolution.
#[inline]
pub fn unit_interval(seed: u64) -> f64 {
    (mix64(seed) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Bernoulli draw: passes iff `unit_interval(seed) < p`.
pub fn synthetic_trial(p: f64, trial_seed: u64) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("probability {p} outside [0,1]")));
    }
    Ok(unit_interval(trial_seed) < p)
}

/// Oracle that answers from each instance's [`SyntheticModel`] evaluated at
/// a fixed model size. Instances without a model use `default_model`.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    pub model_size: f64,
    pub default_model: Option<SyntheticModel>,
}

impl SyntheticOracle {
    pub fn new(model_size: f64, default_model: Option<SyntheticModel>) -> Self {
        SyntheticOracle {
            model_size,
            default_model,
        }
    }

    pub fn probability(&self, instance: &TaskInstance) -> Result<f64> {
        let model = instance
            .synthetic
            .as_ref()
            .or(self.default_model.as_ref())
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "instance {} has no synthetic model and no default was given",
                    instance.instance_id
                ))
            })?;
        model.probability(self.model_size)
    }
}

fn canned_hash(passed: bool) -> String {
    static HASHES: OnceLock<[String; 2]> = OnceLock::new();
    let h = HASHES.get_or_init(|| {
        [
            sha256_hex(b"synthetic:fail"),
            sha256_hex(b"synthetic:pass"),
        ]
    });
    h[passed as usize].clone()
}

impl TaskOracle for SyntheticOracle {
    fn trial(
        &self,
        instance: &TaskInstance,
        _trial_index: u64,
        trial_seed: u64,
    ) -> Result<TrialOutcome, TrialError> {
        let p = self
            .probability(instance)
            .map_err(|e| TrialError::new("synthetic-config", e.to_string()))?;
        let passed = synthetic_trial(p, trial_seed)
            .map_err(|e| TrialError::new("synthetic-config", e.to_string()))?;
        Ok(TrialOutcome {
            passed,
            output_hash: canned_hash(passed),
            latency_ms: 0,
        })
    }

    fn describe(&self) -> String {
        format!(
            "synthetic n={:e} default={}",
            self.model_size,
            serde_json::to_string(&self.default_model).unwrap_or_default()
        )
    }
}
