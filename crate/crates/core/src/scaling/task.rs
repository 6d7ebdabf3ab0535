use serde::{Deserialize, Serialize};

use super::{f_transform, f_transform_se, ScalingPoint};
use crate::error::{Error, Result};
use crate::oracles::SyntheticLaw;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    #[default]
    Unweighted,
    /// Weights `1 / se_F^2`, with `se_F` propagated from each point's PU
    /// standard error. Falls back to unweighted when any SE is missing.
    InverseVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskFitOptions {
    /// Use censored points at their `r_observed / k_max` value.
    pub include_censored: bool,
    pub weighting: Weighting,
}

/// Fitted `PU(N) = exp(-c N^-alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskScalingFit<T = f64> {
    pub c: T,
    pub alpha: T,
    /// Residual sum of squares of `log(-log PU)` against `log N`.
    pub residual_sum_squares: T,
    pub n_points: usize,
    pub n_excluded: usize,
}

impl<T: Scalar> TaskScalingFit<T> {
    pub fn law(&self) -> SyntheticLaw<T> {
        SyntheticLaw {
            c: self.c,
            alpha: self.alpha,
        }
    }
}

/// Result of the straight-line fit in `(log N, F)` space.
pub(crate) struct LineFit<T> {
    pub slope: T,
    pub intercept: T,
    pub rss: T,
}

/// Weighted least squares of `y` on `x`, computed around the weighted means.
pub(crate) fn fit_line<T: Scalar>(x: &[T], y: &[T], w: Option<&[T]>) -> Result<LineFit<T>> {
    let weight = |i: usize| w.map_or(T::one(), |w| w[i]);
    let sw: T = (0..x.len()).map(weight).sum();
    let mx = (0..x.len()).map(|i| weight(i) * x[i]).sum::<T>() / sw;
    let my = (0..x.len()).map(|i| weight(i) * y[i]).sum::<T>() / sw;
    let sxx: T = (0..x.len()).map(|i| weight(i) * (x[i] - mx) * (x[i] - mx)).sum();
    let sxy: T = (0..x.len()).map(|i| weight(i) * (x[i] - mx) * (y[i] - my)).sum();
    if !(sxx > T::zero()) {
        return Err(Error::DegenerateFit(
            "regression needs at least two distinct model sizes".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let r = yi - (intercept + slope * xi);
            r * r
        })
        .sum();
    Ok(LineFit {
        slope,
        intercept,
        rss,
    })
}

fn usable<T: Scalar>(p: &ScalingPoint<T>, opts: &TaskFitOptions) -> bool {
    (opts.include_censored || !p.censored) && p.n > T::zero() && p.value > T::zero() && p.value < T::one()
}

pub fn fit_task_scaling<T: Scalar>(points: &[ScalingPoint<T>]) -> Result<TaskScalingFit<T>> {
    fit_task_scaling_with(points, &TaskFitOptions::default())
}

/// Ordinary (or inverse-variance weighted) least squares of
/// `log(-log PU)` on `log N`: slope `-alpha`, intercept `log c`.
/// Censored points and PU values of exactly 0 or 1 are skipped and counted
/// in `n_excluded`.
pub fn fit_task_scaling_with<T: Scalar>(
    points: &[ScalingPoint<T>],
    opts: &TaskFitOptions,
) -> Result<TaskScalingFit<T>> {
    let kept: Vec<&ScalingPoint<T>> = points.iter().filter(|p| usable(p, opts)).collect();
    if kept.len() < 2 {
        return Err(Error::insufficient(2, kept.len(), "task scaling fit"));
    }
    let x: Vec<T> = kept.iter().map(|p| p.n.ln()).collect();
    let y = kept
        .iter()
        .map(|p| f_transform(p.value))
        .collect::<Result<Vec<T>>>()?;
    let weights: Option<Vec<T>> = match opts.weighting {
        Weighting::Unweighted => None,
        Weighting::InverseVariance => kept
            .iter()
            .map(|p| {
                p.se
                    .filter(|s| *s > T::zero())
                    .map(|s| {
                        let sf = f_transform_se(p.value, s);
                        T::one() / (sf * sf)
                    })
            })
            .collect(),
    };
    let line = fit_line(&x, &y, weights.as_deref())?;
    let alpha = -line.slope;
    if !(alpha > T::zero()) {
        return Err(Error::DegenerateFit(format!(
            "fitted alpha={alpha} is not positive (PU does not grow with N)"
        )));
    }
    Ok(TaskScalingFit {
        c: line.intercept.exp(),
        alpha,
        residual_sum_squares: line.rss,
        n_points: kept.len(),
        n_excluded: points.len() - kept.len(),
    })
}

/// `exp(-c n^-alpha)`.
pub fn predict_pu<T: Scalar>(fit: &TaskScalingFit<T>, n: T) -> Result<T> {
    crate::oracles::scaling_family_probability(&fit.law(), n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    Direct,
    LossAssisted,
}

/// Per-instance task law `IPU(c_s, alpha_s; N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFit<T = f64> {
    pub instance_id: String,
    pub c_s: T,
    pub alpha_s: T,
    pub method: FitMethod,
    pub n_points: usize,
}

impl<T: Scalar> InstanceFit<T> {
    pub fn predict(&self, n: T) -> Result<T> {
        crate::oracles::scaling_family_probability(
            &SyntheticLaw {
                c: self.c_s,
                alpha: self.alpha_s,
            },
            n,
        )
    }
}

/// Direct per-instance fit; same regression as [`fit_task_scaling`].
pub fn fit_instance<T: Scalar>(
    instance_id: &str,
    points: &[ScalingPoint<T>],
    opts: &TaskFitOptions,
) -> Result<InstanceFit<T>> {
    let fit = fit_task_scaling_with(points, opts).map_err(|e| match e {
        Error::InsufficientData { needed, got, .. } => {
            Error::insufficient(needed, got, format!("instance {instance_id}"))
        }
        other => other,
    })?;
    Ok(InstanceFit {
        instance_id: instance_id.to_string(),
        c_s: fit.c,
        alpha_s: fit.alpha,
        method: FitMethod::Direct,
        n_points: fit.n_points,
    })
}

/// Dataset PU at `n` as the mean of per-instance predictions.
pub fn aggregate_instances<T: Scalar>(fits: &[InstanceFit<T>], n: T) -> Result<T> {
    if fits.is_empty() {
        return Err(Error::insufficient(1, 0, "instance aggregation"));
    }
    // running mean: identical predictions average to themselves exactly
    let mut mean = T::zero();
    for (i, f) in fits.iter().enumerate() {
        mean = mean + (f.predict(n)? - mean) / T::from_usize_lossy(i + 1);
    }
    Ok(mean)
}

/// `|predicted - actual| / actual`.
pub fn relative_deviation<T: Scalar>(predicted: T, actual: T) -> Result<T> {
    if actual == T::zero() || actual.is_nan() {
        return Err(Error::domain("relative deviation against an actual value of 0"));
    }
    Ok((predicted - actual).abs() / actual.abs())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const SIZES: [f64; 6] = [0.036e9, 0.109e9, 0.241e9, 0.499e9, 0.892e9, 1.542e9];

    fn exact_points(c: f64, alpha: f64) -> Vec<ScalingPoint> {
        let law = SyntheticLaw { c, alpha };
        SIZES
            .iter()
            .map(|&n| ScalingPoint::new(n, crate::oracles::scaling_family_probability(&law, n).unwrap()))
            .collect()
    }

    #[test]
    fn noise_free_recovery() {
        let fit = fit_task_scaling(&exact_points(1e3, 0.3)).unwrap();
        assert!((fit.c / 1e3 - 1.0).abs() < 1e-9, "{}", fit.c);
        assert!((fit.alpha / 0.3 - 1.0).abs() < 1e-9);
        assert!(fit.residual_sum_squares < 1e-20);
        for p in exact_points(1e3, 0.3) {
            assert!((predict_pu(&fit, p.n).unwrap() / p.value - 1.0).abs() < 1e-9);
        }
        assert!((predict_pu(&fit, 1e300).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_points_interpolate() {
        let pts = [ScalingPoint::new(1e8f64, 0.01), ScalingPoint::new(1e9, 0.2)];
        let fit = fit_task_scaling(&pts).unwrap();
        assert_eq!(fit.n_points, 2);
        assert!(fit.residual_sum_squares < 1e-25);
        assert!((predict_pu(&fit, 1e8).unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn censored_and_degenerate_points_are_excluded() {
        let mut pts = exact_points(1e3, 0.3);
        pts[0].censored = true;
        pts[1].value = 0.0;
        let fit = fit_task_scaling(&pts).unwrap();
        assert_eq!((fit.n_points, fit.n_excluded), (4, 2));
        let few = [ScalingPoint::new(1e8, 0.01), ScalingPoint::new(1e9, 0.0)];
        assert!(matches!(fit_task_scaling(&few), Err(Error::InsufficientData { .. })));
        let mut inc = pts.clone();
        inc[1].value = 1e-7;
        let f = fit_task_scaling_with(&inc, &TaskFitOptions { include_censored: true, ..Default::default() }).unwrap();
        assert_eq!(f.n_points, 6);
    }

    #[test]
    fn decreasing_pu_is_degenerate() {
        let pts = [ScalingPoint::new(1e8, 0.3), ScalingPoint::new(1e9, 0.2)];
        assert!(matches!(fit_task_scaling(&pts), Err(Error::DegenerateFit(_))));
        let same = [ScalingPoint::new(1e8, 0.3), ScalingPoint::new(1e8, 0.2)];
        assert!(fit_task_scaling(&same).is_err());
    }

    #[test]
    fn weighted_fit_is_exact_on_exact_data() {
        let pts: Vec<_> = exact_points(50.0, 0.2).into_iter().enumerate().map(|(i, p)| p.with_se(0.001 * (i + 1) as f64)).collect();
        let f = fit_task_scaling_with(&pts, &TaskFitOptions { weighting: Weighting::InverseVariance, ..Default::default() }).unwrap();
        assert!((f.alpha - 0.2).abs() < 1e-10);
    }

    #[test]
    fn table2_instance_24_golden() {
        let pus = [0.00375, 0.05125, 0.350625, 0.3625, 0.568125, 0.796875];
        let pts: Vec<_> = SIZES.iter().zip(pus).map(|(&n, p)| ScalingPoint::new(n, p)).collect();
        let fit = fit_instance("24", &pts, &TaskFitOptions::default()).unwrap();
        // frozen from an independent numpy.polyfit of log(-log pu) on log n
        assert!((fit.alpha_s - ALPHA_24).abs() < 1e-9, "{}", fit.alpha_s);
        assert!((fit.c_s.ln() - LOG_C_24).abs() < 1e-8, "{}", fit.c_s.ln());
    }

    const ALPHA_24: f64 = 0.803_220_618_167_045_7;
    const LOG_C_24: f64 = 15.799_081_328_160_1;

    #[test]
    fn aggregation() {
        let n: f64 = 1e9;
        let fit_for = |p: f64| InstanceFit {
            instance_id: "x".into(),
            c_s: -p.ln() * n.powf(0.5),
            alpha_s: 0.5,
            method: FitMethod::Direct,
            n_points: 2,
        };
        let one = fit_for(0.2);
        assert!((aggregate_instances(&[one.clone()], n).unwrap() - 0.2).abs() < 1e-12);
        assert!((aggregate_instances(&[one, fit_for(0.8)], n).unwrap() - 0.5).abs() < 1e-12);
        assert!(aggregate_instances::<f64>(&[], n).is_err());
    }

    #[test]
    fn shared_parameters_match_dataset_prediction() {
        let fit = fit_task_scaling(&exact_points(200.0, 0.25)).unwrap();
        let inst = InstanceFit { instance_id: "a".into(), c_s: fit.c, alpha_s: fit.alpha, method: FitMethod::Direct, n_points: 6 };
        let n = 2.45e9;
        assert_eq!(aggregate_instances(&vec![inst; 7], n).unwrap(), predict_pu(&fit, n).unwrap());
    }

    #[test]
    fn table1_deviations() {
        let d = relative_deviation(0.05987f64, 0.05990).unwrap();
        assert!((d - 0.000_500_834_7).abs() < 1e-9, "{d}");
        let d = relative_deviation(0.00352f64, 0.00346).unwrap();
        assert!((d - 0.017_341_04).abs() < 1e-7, "{d}");
        assert_eq!(relative_deviation(0.3f64, 0.3).unwrap(), 0.0);
        assert!(relative_deviation(0.3f64, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn scale_covariance(c in 1.0f64..1e3, alpha in 0.05f64..0.6, s in 1e-3f64..1e3) {
            let pts = exact_points(c, alpha);
            prop_assume!(pts.iter().all(|p| p.value > 1e-300 && p.value < 1.0 - 1e-12));
            let base = fit_task_scaling(&pts).unwrap();
            let scaled: Vec<_> = pts.iter().map(|p| ScalingPoint::new(p.n * s, p.value)).collect();
            let f = fit_task_scaling(&scaled).unwrap();
            prop_assert!((f.alpha / base.alpha - 1.0).abs() < 1e-9);
            prop_assert!((f.c / (base.c * s.powf(base.alpha)) - 1.0).abs() < 1e-9);
            let n = 3e9;
            prop_assert!((predict_pu(&f, n * s).unwrap() - predict_pu(&base, n).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn round_trip(c in 1.0f64..1e3, alpha in 0.05f64..0.6) {
            let pts = exact_points(c, alpha);
            prop_assume!(pts.iter().all(|p| p.value > 1e-300 && p.value < 1.0 - 1e-9));
            let fit = fit_task_scaling(&pts).unwrap();
            for p in &pts {
                prop_assert!((predict_pu(&fit, p.n).unwrap() / p.value - 1.0).abs() < 1e-9);
            }
        }
    }
}
