//! Glue between the store and the numerical modules: executing a run into a
//! run directory, and turning finished runs into scaling points, instance
//! fits and growth curves.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::emergence::{build_growth_curve_from_instances, GrowthCurve};
use crate::error::{Error, Result};
use crate::estimator::{aggregate_dataset, replay_pass_until, resume_pass_until, EstimatorConfig, PassUntilEstimate};
use crate::oracles::{TaskInstance, TaskOracle};
use crate::scalar::{mean, sample_std};
use crate::scaling::{
    aggregate_instances, f_transform, fit_instance, fit_loss_pu_relation, fit_task_scaling_with,
    loss_assisted_instance_fit, predict_pu, InstanceFit, LossPuPair, LossPuRelation, ScalingPoint,
    TaskFitOptions, TaskScalingFit,
};
use crate::store::{
    ContentRef, InstanceEntry, InstanceStatus, LoadedRun, LossTable, RunDataset, RunDir, RunManifest, LOSS_CONVENTION,
};

/// Everything needed to start (or continue) one evaluation run.
#[derive(Debug, Clone)]
pub struct RunRequest {
    pub run_id: String,
    pub model_id: String,
    pub model_size: f64,
    pub suite: ContentRef,
    pub config: EstimatorConfig,
    pub n_bootstrap: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub estimates: Vec<PassUntilEstimate>,
    pub dataset: RunDataset,
    /// Lines appended to the trial log by this call.
    pub new_trials: u64,
}

/// Runs PassUntil for every non-excluded instance and writes the manifest,
/// trial log, estimates and dataset summary into `dir`.
///
/// An existing run in `dir` is continued: finished instances are replayed
/// from the log and unfinished ones resume from their recorded verdicts. The
/// manifest is rewritten after every instance, so an interrupted run stays
/// resumable. An instance that fails is marked aborted and the error
/// returned.
pub fn execute_run<O: TaskOracle + ?Sized>(
    dir: &RunDir,
    request: &RunRequest,
    instances: &[TaskInstance],
    oracle: &O,
) -> Result<RunOutcome> {
    request.config.validate()?;
    let active: Vec<&TaskInstance> = instances.iter().filter(|i| !i.excluded).collect();
    if active.is_empty() {
        return Err(Error::insufficient(1, 0, "evaluation needs at least one non-excluded instance"));
    }
    let fresh = RunManifest {
        run_id: request.run_id.clone(),
        suite: request.suite.clone(),
        model_id: request.model_id.clone(),
        model_size: request.model_size,
        estimator: request.config,
        oracle: RunManifest::oracle_ref(&oracle.describe()),
        loss_convention: LOSS_CONVENTION.to_string(),
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        instances: active
            .iter()
            .map(|i| InstanceEntry {
                instance_id: i.instance_id.clone(),
                status: InstanceStatus::Pending,
            })
            .collect(),
    };
    let mut manifest = if dir.has_manifest() {
        let existing = dir.read_manifest()?;
        existing.check_resumable(&fresh)?;
        if existing.instances.len() != fresh.instances.len()
            || existing.instances.iter().zip(&fresh.instances).any(|(a, b)| a.instance_id != b.instance_id)
        {
            return Err(Error::DigestMismatch {
                what: "instance list".into(),
                expected: format!("{} instances", existing.instances.len()),
                actual: format!("{} instances", fresh.instances.len()),
            });
        }
        RunManifest {
            estimator: request.config,
            ..existing
        }
    } else {
        dir.create()?;
        fresh
    };
    dir.write_manifest(&manifest)?;

    let mut log = dir.open_log(&manifest)?;
    let lines_before = log.len();
    let mut estimates = Vec::with_capacity(active.len());
    for inst in &active {
        let id = inst.instance_id.as_str();
        let known = log.known(id);
        let finished = matches!(
            manifest.status(id),
            Some(InstanceStatus::Complete | InstanceStatus::Censored)
        );
        let log_ref = crate::estimator::TrialSink::log_ref(&log, id);
        let replayed = if finished {
            replay_pass_until(id, &manifest.model_id, &manifest.estimator, &known, &log_ref)?
        } else {
            None
        };
        let est = match replayed {
            Some(est) => est,
            None => match resume_pass_until(oracle, inst, &manifest.model_id, &manifest.estimator, &known, &mut log) {
                Ok(est) => est,
                Err(e) => {
                    manifest.set_status(id, InstanceStatus::Aborted);
                    dir.write_manifest(&manifest)?;
                    return Err(e);
                }
            },
        };
        let status = if est.censored {
            InstanceStatus::Censored
        } else {
            InstanceStatus::Complete
        };
        if manifest.status(id) != Some(status) {
            manifest.set_status(id, status);
            dir.write_manifest(&manifest)?;
        }
        estimates.push(est);
    }
    log.sync()?;
    let aggregate = aggregate_dataset(&estimates, request.n_bootstrap, request.config.base_seed)?;
    let dataset = RunDataset::new(&manifest, &aggregate);
    dir.write_estimates(&estimates)?;
    dir.write_dataset(&dataset)?;
    Ok(RunOutcome {
        manifest,
        estimates,
        dataset,
        new_trials: log.len() - lines_before,
    })
}

/// Runs ordered by model size; sizes must be distinct and positive.
pub fn sort_runs(runs: &[LoadedRun]) -> Result<Vec<&LoadedRun>> {
    let mut sorted: Vec<&LoadedRun> = runs.iter().collect();
    sorted.sort_by(|a, b| a.manifest.model_size.total_cmp(&b.manifest.model_size));
    for w in sorted.windows(2) {
        if w[0].manifest.model_size == w[1].manifest.model_size {
            return Err(Error::domain(format!(
                "runs {} and {} share model size {}",
                w[0].manifest.run_id, w[1].manifest.run_id, w[0].manifest.model_size
            )));
        }
    }
    if let Some(r) = sorted.iter().find(|r| !(r.manifest.model_size > 0.0 && r.manifest.model_size.is_finite())) {
        return Err(Error::domain(format!(
            "run {} has invalid model size {}",
            r.manifest.run_id, r.manifest.model_size
        )));
    }
    Ok(sorted)
}

/// One observed dataset-level point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePoint {
    pub run_id: String,
    pub model_id: String,
    pub n: f64,
    pub mean_pu: f64,
    /// Standard error of the mean over instances.
    pub se: f64,
    pub n_instances: usize,
    pub censored: usize,
}

impl SizePoint {
    fn from_estimates(run_id: &str, model_id: &str, n: f64, estimates: &[PassUntilEstimate]) -> Result<Self> {
        let pus: Vec<f64> = estimates.iter().map(|e| e.pu).collect();
        let m = mean(&pus).ok_or_else(|| Error::insufficient(1, 0, format!("run {run_id} has no estimates")))?;
        Ok(SizePoint {
            run_id: run_id.to_string(),
            model_id: model_id.to_string(),
            n,
            mean_pu: m,
            se: sample_std(&pus) / (pus.len() as f64).sqrt(),
            n_instances: pus.len(),
            censored: estimates.iter().filter(|e| e.censored).count(),
        })
    }

    pub fn scaling_point(&self) -> ScalingPoint {
        ScalingPoint::new(self.n, self.mean_pu).with_se(self.se)
    }
}

/// Dataset-level points, one per run, in size order.
pub fn size_points(runs: &[LoadedRun]) -> Result<Vec<SizePoint>> {
    sort_runs(runs)?
        .into_iter()
        .map(|r| SizePoint::from_estimates(&r.manifest.run_id, &r.manifest.model_id, r.manifest.model_size, &r.estimates))
        .collect()
}

/// Dataset-level fit: mean PU per size, then the task-law regression.
pub fn fit_dataset(points: &[SizePoint], opts: &TaskFitOptions) -> Result<TaskScalingFit> {
    let pts: Vec<ScalingPoint> = points.iter().map(SizePoint::scaling_point).collect();
    fit_task_scaling_with(&pts, opts)
}

/// Per-instance observations `(n, estimate)` in size order, keyed by
/// instance id.
pub fn instance_series(runs: &[LoadedRun]) -> Result<BTreeMap<String, Vec<(f64, &PassUntilEstimate)>>> {
    let mut out: BTreeMap<String, Vec<(f64, &PassUntilEstimate)>> = BTreeMap::new();
    for run in sort_runs(runs)? {
        for est in &run.estimates {
            out.entry(est.instance_id.clone())
                .or_default()
                .push((run.manifest.model_size, est));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnfittedInstance {
    pub instance_id: String,
    pub reason: String,
}

/// Instance-level fits plus the instances that could not be fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFitSet {
    pub fits: Vec<InstanceFit>,
    pub unfitted: Vec<UnfittedInstance>,
    /// Loss-to-PU relation used for loss-assisted fits, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<LossPuRelation>,
    pub points_used: usize,
    pub points_excluded: usize,
}

impl InstanceFitSet {
    /// Mean of the fitted instances' predicted PU. Unfitted instances are
    /// left out of the mean.
    pub fn predict(&self, n: f64) -> Result<f64> {
        aggregate_instances(&self.fits, n)
    }
}

/// Fits every instance directly; instances without two usable points (or
/// with a non-increasing trend) fall back to the loss-assisted path when
/// `losses` is given, and are reported unfitted otherwise.
pub fn fit_instances(runs: &[LoadedRun], losses: Option<&LossTable>, opts: &TaskFitOptions) -> Result<InstanceFitSet> {
    let series = instance_series(runs)?;
    let relation = match losses {
        Some(table) => {
            let pairs: Vec<LossPuPair> = runs
                .iter()
                .flat_map(|r| {
                    r.estimates.iter().filter_map(move |e| {
                        table
                            .get(&e.instance_id, &r.manifest.model_id)
                            .map(|l| LossPuPair::from_estimate(l, e))
                    })
                })
                .collect();
            Some(fit_loss_pu_relation(&pairs, None)?)
        }
        None => None,
    };
    let mut fits = Vec::new();
    let mut unfitted = Vec::new();
    let mut used = 0;
    let mut total = 0;
    for (id, obs) in &series {
        total += obs.len();
        let points: Vec<ScalingPoint> = obs
            .iter()
            .map(|(n, e)| ScalingPoint::new(*n, e.pu).censored(e.censored))
            .collect();
        let direct_err = match fit_instance(id, &points, opts) {
            Ok(fit) => {
                used += fit.n_points;
                fits.push(fit);
                continue;
            }
            Err(e @ (Error::InsufficientData { .. } | Error::DegenerateFit(_))) => e,
            Err(e) => return Err(e),
        };
        let assisted = match (losses, &relation) {
            (Some(table), Some(rel)) => {
                let loss_series: Vec<(f64, f64)> = obs
                    .iter()
                    .filter_map(|(n, e)| table.get(id, &e.model_id).map(|l| (*n, l)))
                    .collect();
                Some(loss_assisted_instance_fit(id, &loss_series, rel))
            }
            _ => None,
        };
        match assisted {
            Some(Ok(fit)) => fits.push(fit),
            Some(Err(e)) => unfitted.push(UnfittedInstance {
                instance_id: id.clone(),
                reason: format!("{direct_err}; loss-assisted: {e}"),
            }),
            None => unfitted.push(UnfittedInstance {
                instance_id: id.clone(),
                reason: direct_err.to_string(),
            }),
        }
    }
    if fits.is_empty() {
        return Err(Error::insufficient(1, 0, "no instance could be fitted"));
    }
    Ok(InstanceFitSet {
        fits,
        unfitted,
        relation,
        points_used: used,
        points_excluded: total - used,
    })
}

/// Residual sum of squares, in `log(-log PU)`, of a PU predictor against
/// observed dataset points. Points with PU outside `(0, 1)` are skipped.
pub fn f_residuals(points: &[SizePoint], predict: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let mut rss = 0.0;
    for p in points {
        let Ok(obs) = f_transform(p.mean_pu) else { continue };
        let Ok(fit) = f_transform(predict(p.n)?) else { continue };
        rss += (obs - fit) * (obs - fit);
    }
    Ok(rss)
}

/// Dataset-level prediction helper.
pub fn predict_dataset(fit: &TaskScalingFit, n: f64) -> Result<f64> {
    predict_pu(fit, n)
}

/// Growth curve from finished runs, keeping each instance's PU so the
/// classifier can resample instances.
pub fn growth_curve(runs: &[LoadedRun]) -> Result<GrowthCurve> {
    let sizes: Vec<(f64, Vec<f64>)> = sort_runs(runs)?
        .into_iter()
        .map(|r| (r.manifest.model_size, r.estimates.iter().map(|e| e.pu).collect()))
        .collect();
    build_growth_curve_from_instances(&sizes, "instances")
}
