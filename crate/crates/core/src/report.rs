//! Fit, prediction and classification reports, and the CSV tables emitted
//! for plotting. Every writer here is a pure function of its inputs, so
//! identical inputs give byte-identical files.

use serde::{Deserialize, Serialize};

use crate::emergence::{GrowthClassification, GrowthCurve};
use crate::error::{Error, Result};
use crate::pipeline::{InstanceFitSet, SizePoint};
use crate::scaling::task::fit_line;
use crate::scaling::{predict_pu, relative_deviation, InstanceFit, LossPuRelation, TaskScalingFit};
use crate::store::LoadedRun;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    Dataset,
    Instance,
}

impl FitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FitKind::Dataset => "dataset",
            FitKind::Instance => "instance",
        }
    }
}

/// Fitted parameters: one task law, or one per instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FitParams {
    Dataset {
        c: f64,
        alpha: f64,
    },
    Instance {
        instances: Vec<InstanceFit>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        unfitted: Vec<crate::pipeline::UnfittedInstance>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        relation: Option<LossPuRelation>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub fit_kind: FitKind,
    pub params: FitParams,
    /// Residual sum of squares in `log(-log PU)` against the observed
    /// dataset-level points.
    pub rss: f64,
    pub points_used: usize,
    pub points_excluded: usize,
    /// Observed dataset-level points the fit was made from.
    pub points: Vec<SizePoint>,
}

impl FitReport {
    pub fn dataset(fit: &TaskScalingFit, points: Vec<SizePoint>) -> Self {
        FitReport {
            fit_kind: FitKind::Dataset,
            params: FitParams::Dataset {
                c: fit.c,
                alpha: fit.alpha,
            },
            rss: fit.residual_sum_squares,
            points_used: fit.n_points,
            points_excluded: fit.n_excluded,
            points,
        }
    }

    pub fn instance(set: InstanceFitSet, points: Vec<SizePoint>) -> Result<Self> {
        let rss = crate::pipeline::f_residuals(&points, |n| set.predict(n))?;
        Ok(FitReport {
            fit_kind: FitKind::Instance,
            rss,
            points_used: set.points_used,
            points_excluded: set.points_excluded,
            params: FitParams::Instance {
                instances: set.fits,
                unfitted: set.unfitted,
                relation: set.relation,
            },
            points,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match (&self.fit_kind, &self.params) {
            (FitKind::Dataset, FitParams::Dataset { c, alpha }) => *c > 0.0 && *alpha > 0.0,
            (FitKind::Instance, FitParams::Instance { instances, .. }) => {
                !instances.is_empty() && instances.iter().all(|f| f.c_s > 0.0 && f.alpha_s > 0.0)
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Schema {
                path: None,
                field: "params".into(),
                line: None,
                message: format!("parameters do not form a valid {} fit", self.fit_kind.as_str()),
            })
        }
    }

    /// Predicted dataset PU at `n`.
    pub fn predict(&self, n: f64) -> Result<f64> {
        match &self.params {
            FitParams::Dataset { c, alpha } => predict_pu(
                &TaskScalingFit {
                    c: *c,
                    alpha: *alpha,
                    residual_sum_squares: self.rss,
                    n_points: self.points_used,
                    n_excluded: self.points_excluded,
                },
                n,
            ),
            FitParams::Instance { instances, .. } => crate::scaling::aggregate_instances(instances, n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub fit_kind: FitKind,
    pub target_n: f64,
    pub predicted_pu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_deviation: Option<f64>,
}

pub fn predict_report(fit: &FitReport, target_n: f64, actual: Option<f64>) -> Result<PredictionReport> {
    if !(target_n > 0.0 && target_n.is_finite()) {
        return Err(Error::domain(format!("target size {target_n} must be positive")));
    }
    let predicted = fit.predict(target_n)?;
    let deviation = actual.map(|a| relative_deviation(predicted, a)).transpose()?;
    Ok(PredictionReport {
        fit_kind: fit.fit_kind,
        target_n,
        predicted_pu: predicted,
        actual_pu: actual,
        relative_deviation: deviation,
    })
}

/// A classification together with the curve it was computed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub curve: GrowthCurve,
    pub classification: GrowthClassification,
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::domain(format!("csv encoding: {e}"));
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(&row).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| Error::domain(format!("csv encoding: {e}")))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub const RUN_COLUMNS: [&str; 10] = [
    "run_id",
    "model_id",
    "model_size",
    "instance_id",
    "r_target",
    "r_observed",
    "k_used",
    "k_max",
    "censored",
    "pu",
];

/// One row per estimate, runs in the given order. No runs gives a header
/// only.
pub fn runs_csv(runs: &[LoadedRun]) -> Result<Vec<u8>> {
    let rows = runs
        .iter()
        .flat_map(|r| {
            r.estimates.iter().map(move |e| {
                vec![
                    r.manifest.run_id.clone(),
                    r.manifest.model_id.clone(),
                    num(r.manifest.model_size),
                    e.instance_id.clone(),
                    e.r_target.to_string(),
                    e.r_observed.to_string(),
                    e.k_used.to_string(),
                    e.k_max.to_string(),
                    e.censored.to_string(),
                    num(e.pu),
                ]
            })
        })
        .collect();
    csv_bytes(&RUN_COLUMNS, rows)
}

#[derive(Serialize)]
struct RunJson<'a> {
    run_id: &'a str,
    model_id: &'a str,
    model_size: f64,
    estimates: &'a [crate::estimator::PassUntilEstimate],
}

pub fn runs_json(runs: &[LoadedRun]) -> Result<Vec<u8>> {
    let items: Vec<RunJson> = runs
        .iter()
        .map(|r| RunJson {
            run_id: &r.manifest.run_id,
            model_id: &r.manifest.model_id,
            model_size: r.manifest.model_size,
            estimates: &r.estimates,
        })
        .collect();
    json_bytes(&items)
}

pub const FIT_COLUMNS: [&str; 6] = ["run_id", "n", "log_n", "pu_observed", "pu_se", "pu_fitted"];

/// Observed points next to the fitted curve; `pu_fitted` is the report's
/// prediction at each `n`.
pub fn fit_csv(report: &FitReport) -> Result<Vec<u8>> {
    let rows = report
        .points
        .iter()
        .map(|p| {
            Ok(vec![
                p.run_id.clone(),
                num(p.n),
                num(p.n.ln()),
                num(p.mean_pu),
                num(p.se),
                num(report.predict(p.n)?),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    csv_bytes(&FIT_COLUMNS, rows)
}

pub const PLOT_COLUMNS: [&str; 5] = ["log_n", "f_observed", "f_se", "f_linear_fit", "f_softmin_fit"];

/// Growth-curve plot data: observed `F`, the straight-line fit and, when
/// available, the soft-min fit.
pub fn plot_csv(report: &ClassificationReport) -> Result<Vec<u8>> {
    let x = report.curve.log_n();
    let line = fit_line(&x, &report.curve.f(), None)?;
    let soft = report.classification.soft_min_fit.as_ref();
    let rows = report
        .curve
        .points
        .iter()
        .map(|p| {
            vec![
                num(p.log_n),
                num(p.f),
                opt(p.f_se),
                num(line.intercept + line.slope * p.log_n),
                opt(soft.map(|s| s.predict(p.log_n))),
            ]
        })
        .collect();
    csv_bytes(&PLOT_COLUMNS, rows)
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}
