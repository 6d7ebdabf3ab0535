use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{mean, sample_std, Scalar};
use crate::scaling::{f_transform, f_transform_se, ScalingPoint};

/// One sample of `F(N) = log(-log PU(N))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
pub struct GrowthPoint<T = f64> {
    pub log_n: T,
    pub f: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_se: Option<T>,
    /// Per-instance PU values behind this point, when known. Used for
    /// resampling in the classifier's bootstrap.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub instance_pu: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCurve<T = f64> {
    pub points: Vec<GrowthPoint<T>>,
    pub source: String,
    /// Input points dropped because PU was censored, 0 or 1.
    #[serde(default)]
    pub n_excluded: usize,
}

impl<T: Scalar> GrowthCurve<T> {
    pub fn from_points(points: Vec<GrowthPoint<T>>, source: impl Into<String>) -> Result<Self> {
        let curve = GrowthCurve {
            points,
            source: source.into(),
            n_excluded: 0,
        };
        curve.validate()?;
        Ok(curve)
    }

    /// Builds a curve from exact `(log_n, f)` pairs.
    pub fn from_pairs(pairs: &[(T, T)], source: impl Into<String>) -> Result<Self> {
        Self::from_points(
            pairs
                .iter()
                .map(|&(log_n, f)| GrowthPoint {
                    log_n,
                    f,
                    f_se: None,
                    instance_pu: Vec::new(),
                })
                .collect(),
            source,
        )
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.points.windows(2) {
            if !(w[1].log_n > w[0].log_n) {
                return Err(Error::domain(format!(
                    "log_n must be strictly increasing ({} then {})",
                    w[0].log_n, w[1].log_n
                )));
            }
        }
        Ok(())
    }

    pub fn log_n(&self) -> Vec<T> {
        self.points.iter().map(|p| p.log_n).collect()
    }

    pub fn f(&self) -> Vec<T> {
        self.points.iter().map(|p| p.f).collect()
    }
}

fn sorted_by_n<T: Scalar, P: Clone>(items: &[P], n: impl Fn(&P) -> T) -> Vec<P> {
    let mut v = items.to_vec();
    v.sort_by(|a, b| n(a).partial_cmp(&n(b)).unwrap_or(std::cmp::Ordering::Equal));
    v
}

/// Turns a PU series into `(log n, F)` points. Censored points and PU of
/// exactly 0 or 1 are dropped and counted; point SEs are propagated to `F`
/// by the delta method.
pub fn build_growth_curve<T: Scalar>(series: &[ScalingPoint<T>], source: impl Into<String>) -> Result<GrowthCurve<T>> {
    let usable: Vec<ScalingPoint<T>> = series
        .iter()
        .filter(|p| !p.censored && p.value > T::zero() && p.value < T::one() && p.n > T::zero())
        .copied()
        .collect();
    if usable.len() < 3 {
        return Err(Error::insufficient(3, usable.len(), "growth curve"));
    }
    let usable = sorted_by_n(&usable, |p| p.n);
    let points = usable
        .iter()
        .map(|p| {
            Ok(GrowthPoint {
                log_n: p.n.ln(),
                f: f_transform(p.value)?,
                f_se: p.se.map(|s| f_transform_se(p.value, s)),
                instance_pu: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut curve = GrowthCurve::from_points(points, source)?;
    curve.n_excluded = series.len() - usable.len();
    Ok(curve)
}

/// Curve from per-instance PU values at each size: each point is the mean
/// PU with its standard error `s / sqrt(m)`, and keeps the instance values
/// for resampling.
pub fn build_growth_curve_from_instances<T: Scalar>(
    sizes: &[(T, Vec<T>)],
    source: impl Into<String>,
) -> Result<GrowthCurve<T>> {
    let mut points = Vec::new();
    let mut excluded = 0;
    for (n, pus) in sorted_by_n(sizes, |s| s.0) {
        let Some(m) = mean(&pus) else {
            excluded += 1;
            continue;
        };
        if !(m > T::zero() && m < T::one()) {
            excluded += 1;
            continue;
        }
        let se = sample_std(&pus) / T::from_usize_lossy(pus.len()).sqrt();
        points.push(GrowthPoint {
            log_n: n.ln(),
            f: f_transform(m)?,
            f_se: Some(f_transform_se(m, se)),
            instance_pu: pus,
        });
    }
    if points.len() < 3 {
        return Err(Error::insufficient(3, points.len(), "growth curve"));
    }
    let mut curve = GrowthCurve::from_points(points, source)?;
    curve.n_excluded = excluded;
    Ok(curve)
}

/// Second divided differences on a possibly non-uniform grid:
/// `2 [ (f[i+1]-f[i])/(x[i+1]-x[i]) - (f[i]-f[i-1])/(x[i]-x[i-1]) ] / (x[i+1]-x[i-1])`.
pub fn second_differences<T: Scalar>(curve: &GrowthCurve<T>) -> Result<Vec<T>> {
    let x = curve.log_n();
    let f = curve.f();
    second_differences_of(&x, &f)
}

pub(crate) fn second_differences_of<T: Scalar>(x: &[T], f: &[T]) -> Result<Vec<T>> {
    if x.len() < 3 {
        return Err(Error::insufficient(3, x.len(), "second differences"));
    }
    let two = T::lit(2.0);
    (1..x.len() - 1)
        .map(|i| {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            if !(h0 > T::zero() && h1 > T::zero()) {
                return Err(Error::domain("duplicate or unsorted log_n in second differences"));
            }
            Ok(two * ((f[i + 1] - f[i]) / h1 - (f[i] - f[i - 1]) / h0) / (h0 + h1))
        })
        .collect()
}

/// Standard error of each second difference from independent point SEs.
/// Zero where SEs are missing.
pub fn second_difference_se<T: Scalar>(curve: &GrowthCurve<T>) -> Vec<T> {
    let p = &curve.points;
    let two = T::lit(2.0);
    (1..p.len().saturating_sub(1))
        .map(|i| {
            let h0 = p[i].log_n - p[i - 1].log_n;
            let h1 = p[i + 1].log_n - p[i].log_n;
            let s = |j: usize| p[j].f_se.unwrap_or(T::zero());
            let scale = two / (h0 + h1);
            let a = s(i + 1) / h1;
            let b = s(i) * (T::one() / h0 + T::one() / h1);
            let c = s(i - 1) / h0;
            scale * (a * a + b * b + c * c).sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_law_gives_linear_curve() {
        let law = crate::oracles::SyntheticLaw { c: 1e3, alpha: 0.3 };
        let series: Vec<ScalingPoint> = [3.6e7, 1.09e8, 2.41e8, 4.99e8]
            .iter()
            .map(|&n| ScalingPoint::new(n, crate::oracles::scaling_family_probability(&law, n).unwrap()))
            .collect();
        let curve = build_growth_curve(&series, "law").unwrap();
        for d in second_differences(&curve).unwrap() {
            assert!(d.abs() < 1e-12);
        }
        for p in &curve.points {
            assert!((p.f - law.f_value(p.log_n)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pu_is_excluded() {
        let series = [
            ScalingPoint::new(1e8, 0.0),
            ScalingPoint::new(2e8, 0.01),
            ScalingPoint::new(4e8, 0.05),
            ScalingPoint::new(8e8, 0.2),
        ];
        let curve = build_growth_curve(&series, "x").unwrap();
        assert_eq!((curve.points.len(), curve.n_excluded), (3, 1));
        assert!(build_growth_curve(&series[..3], "x").is_err());
    }

    #[test]
    fn sparse_tail_reference_values() {
        let series = [
            ScalingPoint::new(0.499e9, 0.000625),
            ScalingPoint::new(0.892e9, 0.001875),
            ScalingPoint::new(1.542e9, 0.008125),
        ];
        let curve: GrowthCurve = build_growth_curve(&series, "tail").unwrap();
        // 50-digit mpmath references
        let want: [(f64, f64); 3] = [
            (20.028_116_653_715_793, 1.998_469_921_523_182),
            (20.608_976_690_544_283, 1.837_234_082_641_281),
            (21.156_346_112_087_549, 1.571_281_019_782_476_9),
        ];
        for (p, (x, f)) in curve.points.iter().zip(want) {
            assert!((p.log_n - x).abs() < 1e-12, "{}", p.log_n);
            assert!((p.f - f).abs() < 1e-12, "{}", p.f);
        }
    }

    #[test]
    fn second_difference_shapes() {
        let xs: Vec<f64> = vec![0.0, 0.5, 1.7, 2.0, 3.1, 4.0];
        let line: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 3.0 - 0.7 * x)).collect();
        for d in second_differences(&GrowthCurve::from_pairs(&line, "l").unwrap()).unwrap() {
            assert!(d.abs() < 1e-12);
        }
        let quad: Vec<(f64, f64)> = xs.iter().map(|&x| (x, x * x)).collect();
        for d in second_differences(&GrowthCurve::from_pairs(&quad, "q").unwrap()).unwrap() {
            assert!((d - 2.0).abs() < 1e-12);
        }
        // min of two lines crossing at the grid point x = 2.0
        let kink: Vec<(f64, f64)> = xs.iter().map(|&x| (x, (1.0 - 0.2 * x).min(3.0 - 1.2 * x))).collect();
        let d = second_differences(&GrowthCurve::from_pairs(&kink, "k").unwrap()).unwrap();
        let negative: Vec<_> = d.iter().filter(|v| **v < -1e-12).collect();
        assert_eq!(negative.len(), 1);
        assert_eq!(d.iter().filter(|v| v.abs() <= 1e-12).count(), d.len() - 1);
    }

    #[test]
    fn duplicate_log_n_rejected() {
        assert!(GrowthCurve::from_pairs(&[(0.0, 1.0), (0.0, 2.0), (1.0, 3.0)], "d").is_err());
        assert!(second_differences_of(&[0.0, 0.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn instance_level_points() {
        let sizes = vec![
            (1e8, vec![0.01, 0.03]),
            (2e8, vec![0.05, 0.07]),
            (4e8, vec![0.0, 0.0]),
            (8e8, vec![0.2, 0.4]),
        ];
        let curve = build_growth_curve_from_instances(&sizes, "i").unwrap();
        assert_eq!(curve.n_excluded, 1);
        assert!((curve.points[0].f - f_transform(0.02f64).unwrap()).abs() < 1e-15);
        assert!(curve.points.iter().all(|p| p.f_se.unwrap() > 0.0 && p.instance_pu.len() == 2));
    }
}
