use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::curve::{second_difference_se, second_differences_of, GrowthCurve};
use super::softmin::{fit_two_circuit, SoftMinOptions, TwoCircuitFit};
use crate::error::{Error, Result};
use crate::oracles::synthetic_mix;
use crate::scalar::{mean, median, Scalar};
use crate::scaling::f_transform;
use crate::scaling::task::fit_line;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthVerdict {
    /// `F` linear in `log N`.
    ScalingLaw,
    /// `F` convex: growth slower than a scaling law.
    SubScaling,
    /// `F` concave: accelerated emergence.
    SuperScaling,
    /// Both convex and concave parts.
    Mixed,
    /// Too noisy for the verdict to survive resampling.
    Inconclusive,
}

impl GrowthVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            GrowthVerdict::ScalingLaw => "scaling-law",
            GrowthVerdict::SubScaling => "sub-scaling",
            GrowthVerdict::SuperScaling => "super-scaling",
            GrowthVerdict::Mixed => "mixed",
            GrowthVerdict::Inconclusive => "inconclusive",
        }
    }
}

impl std::fmt::Display for GrowthVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How large a second difference must be to count as nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Tolerance<T = f64> {
    /// One threshold for all differences: `max(floor, multiplier * median f_se)`.
    MedianSe { multiplier: T, floor: T },
    /// A threshold per difference: `max(floor, z * se)` where `se` is the
    /// standard error of that difference propagated from the point SEs.
    PerDifference { z: T, floor: T },
    Absolute { value: T },
}

impl<T: Scalar> Default for Tolerance<T> {
    fn default() -> Self {
        Tolerance::MedianSe {
            multiplier: T::lit(2.0),
            floor: T::lit(1e-6),
        }
    }
}

impl<T: Scalar> Tolerance<T> {
    pub fn thresholds(&self, curve: &GrowthCurve<T>) -> Vec<T> {
        let m = curve.points.len().saturating_sub(2);
        match *self {
            Tolerance::Absolute { value } => vec![value; m],
            Tolerance::MedianSe { multiplier, floor } => {
                let ses: Vec<T> = curve.points.iter().filter_map(|p| p.f_se).collect();
                let tol = median(&ses).map_or(floor, |s| floor.max(multiplier * s));
                vec![tol; m]
            }
            Tolerance::PerDifference { z, floor } => second_difference_se(curve)
                .into_iter()
                .map(|se| floor.max(z * se))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig<T = f64> {
    pub tolerance: Tolerance<T>,
    /// Share of significant second differences that must agree in sign.
    pub min_sign_consistency: T,
    /// Share of bootstrap curves that must reproduce the verdict.
    pub min_bootstrap_support: T,
    pub n_bootstrap: usize,
    pub seed: u64,
    /// Soft-min fit settings; `None` skips the fit.
    pub soft_min: Option<SoftMinOptions<T>>,
}

impl<T: Scalar> Default for ClassifyConfig<T> {
    fn default() -> Self {
        ClassifyConfig {
            tolerance: Tolerance::default(),
            min_sign_consistency: T::lit(0.8),
            min_bootstrap_support: T::lit(0.7),
            n_bootstrap: 100,
            seed: 0,
            soft_min: Some(SoftMinOptions::default()),
        }
    }
}

impl<T: Scalar> ClassifyConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        if !unit(self.min_sign_consistency) || !unit(self.min_bootstrap_support) {
            return Err(Error::InvalidConfig("consistency and support thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleMethod {
    /// Instance-level PU values were resampled with replacement.
    Instances,
    /// Points were perturbed by their `f` standard errors.
    SePerturbation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthClassification<T = f64> {
    pub verdict: GrowthVerdict,
    /// Verdict of the decision rule before the bootstrap check.
    pub curvature_verdict: GrowthVerdict,
    pub mean_second_difference: T,
    pub sign_consistency: T,
    pub linear_rss: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_min_rss: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_min_fit: Option<TwoCircuitFit<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_support: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resample_method: Option<ResampleMethod>,
    pub second_differences: Vec<T>,
    pub tolerances: Vec<T>,
    pub config: ClassifyConfig<T>,
}

struct Curvature<T> {
    verdict: GrowthVerdict,
    consistency: T,
}

fn curvature_verdict<T: Scalar>(d: &[T], tol: &[T], min_consistency: T) -> Curvature<T> {
    let pos = d.iter().zip(tol).filter(|(d, t)| **d > **t).count();
    let neg = d.iter().zip(tol).filter(|(d, t)| **d < -**t).count();
    if pos + neg == 0 {
        return Curvature {
            verdict: GrowthVerdict::ScalingLaw,
            consistency: T::one(),
        };
    }
    let consistency = T::from_usize_lossy(pos.max(neg)) / T::from_usize_lossy(pos + neg);
    let verdict = if consistency < min_consistency {
        GrowthVerdict::Mixed
    } else if pos >= neg {
        GrowthVerdict::SubScaling
    } else {
        GrowthVerdict::SuperScaling
    };
    Curvature { verdict, consistency }
}

fn resample_method<T: Scalar>(curve: &GrowthCurve<T>) -> Option<ResampleMethod> {
    if curve.points.iter().all(|p| p.instance_pu.len() >= 2) {
        Some(ResampleMethod::Instances)
    } else if curve.points.iter().all(|p| p.f_se.is_some()) {
        Some(ResampleMethod::SePerturbation)
    } else {
        None
    }
}

/// One resampled `f` vector, or `None` when a resampled mean PU leaves (0, 1).
fn resample<T: Scalar>(curve: &GrowthCurve<T>, method: ResampleMethod, rng: &mut ChaCha8Rng) -> Option<Vec<T>> {
    curve
        .points
        .iter()
        .map(|p| match method {
            ResampleMethod::Instances => {
                let m = p.instance_pu.len();
                let draw: Vec<T> = (0..m).map(|_| p.instance_pu[rng.random_range(0..m)]).collect();
                f_transform(mean(&draw)?).ok()
            }
            ResampleMethod::SePerturbation => {
                let z: f64 = rng.sample(StandardNormal);
                Some(p.f + T::lit(z) * p.f_se.unwrap_or(T::zero()))
            }
        })
        .collect()
}

/// Classifies the curvature of `F` in `log N`.
///
/// Second differences beyond the tolerance count as significant. None
/// significant gives `scaling-law`; otherwise the majority sign decides
/// between `sub-scaling` (positive) and `super-scaling` (negative) when at
/// least `min_sign_consistency` of them agree, and `mixed` when not. The
/// rule is then re-run on `n_bootstrap` resampled curves with the same
/// thresholds; if fewer than `min_bootstrap_support` of them agree the
/// verdict becomes `inconclusive`. Curves without SEs or instance values
/// skip the bootstrap.
pub fn classify_growth<T: Scalar>(curve: &GrowthCurve<T>, config: &ClassifyConfig<T>) -> Result<GrowthClassification<T>> {
    config.validate()?;
    curve.validate()?;
    if curve.points.len() < 3 {
        return Err(Error::insufficient(3, curve.points.len(), "growth classification"));
    }
    let x = curve.log_n();
    let f = curve.f();
    let d = second_differences_of(&x, &f)?;
    let tol = config.tolerance.thresholds(curve);
    let point = curvature_verdict(&d, &tol, config.min_sign_consistency);
    let linear_rss = fit_line(&x, &f, None)?.rss;
    let soft_min_fit = match config.soft_min {
        Some(opts) if curve.points.len() >= 4 => Some(fit_two_circuit(curve, &opts)?),
        _ => None,
    };

    let method = if config.n_bootstrap > 0 { resample_method(curve) } else { None };
    let support = method.map(|method| {
        let agree = (0..config.n_bootstrap as u64)
            .filter(|&rep| {
                let mut rng = ChaCha8Rng::seed_from_u64(synthetic_mix(config.seed ^ synthetic_mix(rep)));
                resample(curve, method, &mut rng).is_some_and(|fb| {
                    second_differences_of(&x, &fb)
                        .map(|db| curvature_verdict(&db, &tol, config.min_sign_consistency).verdict == point.verdict)
                        .unwrap_or(false)
                })
            })
            .count();
        T::from_usize_lossy(agree) / T::from_usize_lossy(config.n_bootstrap)
    });
    let verdict = match support {
        Some(s) if s < config.min_bootstrap_support => GrowthVerdict::Inconclusive,
        _ => point.verdict,
    };
    Ok(GrowthClassification {
        verdict,
        curvature_verdict: point.verdict,
        mean_second_difference: mean(&d).unwrap_or(T::zero()),
        sign_consistency: point.consistency,
        linear_rss,
        soft_min_rss: soft_min_fit.map(|s| s.residual_sum_squares),
        soft_min_fit,
        bootstrap_support: support,
        resample_method: method,
        second_differences: d,
        tolerances: tol,
        config: *config,
    })
}
