use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PassUntilEstimate;
use crate::error::{Error, Result};
use crate::scalar::{mean, sample_std, Scalar};

/// Standard deviation of `n_bootstrap` resampled means (with replacement,
/// resample size `values.len()`), seeded by `seed`.
pub fn bootstrap_se<T: Scalar>(values: &[T], n_bootstrap: usize, seed: u64) -> Result<T> {
    if values.is_empty() {
        return Err(Error::domain("bootstrap of an empty sample"));
    }
    if n_bootstrap < 1 {
        return Err(Error::domain("n_bootstrap must be at least 1"));
    }
    if values.iter().all(|&v| v == values[0]) {
        // every resample has the same mean
        return Ok(T::zero());
    }
    let n = values.len();
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<T> = (0..n_bootstrap)
        .map(|_| {
            let s: T = (0..n).map(|_| values[rng.random_range(0..n)]).sum();
            s * inv_n
        })
        .collect();
    Ok(sample_std(&means))
}

/// Dataset-level PassUntil for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEstimate {
    pub model_id: String,
    pub per_instance: BTreeMap<String, PassUntilEstimate>,
    /// Arithmetic mean of per-instance `pu`, censored instances included at
    /// `r_observed / k_max`.
    pub mean_pu: f64,
    pub bootstrap_se: f64,
    pub n_bootstrap: usize,
    pub censored: usize,
}

pub fn aggregate_dataset(
    estimates: &[PassUntilEstimate],
    n_bootstrap: usize,
    seed: u64,
) -> Result<DatasetEstimate> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::domain("cannot aggregate an empty estimate list"))?;
    if let Some(other) = estimates.iter().find(|e| e.model_id != first.model_id) {
        return Err(Error::domain(format!(
            "mixed model ids in aggregate: {} and {}",
            first.model_id, other.model_id
        )));
    }
    let pus: Vec<f64> = estimates.iter().map(|e| e.pu).collect();
    Ok(DatasetEstimate {
        model_id: first.model_id.clone(),
        per_instance: estimates
            .iter()
            .map(|e| (e.instance_id.clone(), e.clone()))
            .collect(),
        mean_pu: mean(&pus).unwrap(),
        bootstrap_se: bootstrap_se(&pus, n_bootstrap, seed)?,
        n_bootstrap,
        censored: estimates.iter().filter(|e| e.censored).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(id: &str, model: &str, pu: f64) -> PassUntilEstimate {
        PassUntilEstimate {
            instance_id: id.into(),
            model_id: model.into(),
            r_target: 1,
            r_observed: 1,
            k_used: 1,
            k_max: 10,
            censored: false,
            pu,
            trial_log_ref: String::new(),
        }
    }

    #[test]
    fn identical_values_have_zero_se() {
        assert_eq!(bootstrap_se(&[0.3f64; 12], 500, 1).unwrap(), 0.0);
        assert!(bootstrap_se::<f64>(&[], 10, 1).is_err());
    }

    #[test]
    fn bernoulli_se_close_to_analytic() {
        let mut v = vec![0.0f64; 10];
        v.extend([1.0; 10]);
        // s / sqrt(n) with s = sqrt(20/76) (n-1 denominator)
        let analytic = (20.0f64 / 76.0).sqrt() / 20f64.sqrt();
        assert!((analytic - 0.1147).abs() < 1e-4);
        let se = bootstrap_se(&v, 2000, 3).unwrap();
        assert!((se / analytic - 1.0).abs() < 0.15, "se {se}");
    }

    #[test]
    fn default_configuration_shape() {
        let v: Vec<f64> = (0..20).map(|i| i as f64 / 100.0).collect();
        let a = bootstrap_se(&v, 100, 11).unwrap();
        assert_eq!(a, bootstrap_se(&v, 100, 11).unwrap());
        assert!(a > 0.0);
    }

    #[test]
    fn aggregation() {
        let d = aggregate_dataset(&[est("a", "m", 0.0), est("b", "m", 0.5), est("c", "m", 1.0)], 100, 0).unwrap();
        assert_eq!(d.mean_pu, 0.5);
        let one = aggregate_dataset(&[est("a", "m", 0.05)], 100, 0).unwrap();
        assert_eq!((one.mean_pu, one.bootstrap_se), (0.05, 0.0));
        assert!(aggregate_dataset(&[est("a", "m", 0.1), est("b", "n", 0.1)], 10, 0).is_err());
        assert!(aggregate_dataset(&[], 10, 0).is_err());
    }

    #[test]
    fn instance_24_row_mean() {
        let row = [0.00375, 0.05125, 0.350625, 0.3625, 0.568125, 0.796875];
        let ests: Vec<_> = row.iter().enumerate().map(|(i, &p)| est(&i.to_string(), "m", p)).collect();
        let d = aggregate_dataset(&ests, 10, 0).unwrap();
        assert!((d.mean_pu - 2.133125 / 6.0).abs() < 1e-15);
    }
}
