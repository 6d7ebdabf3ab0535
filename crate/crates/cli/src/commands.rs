use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use passuntil::emergence::{classify_growth, ClassifyConfig, GrowthVerdict, SoftMinForm, SoftMinOptions, Tolerance};
use passuntil::estimator::EstimatorConfig;
use passuntil::oracles::{EndpointConfig, EndpointOracle, SyntheticOracle, TaskInstance, TaskOracle};
use passuntil::pipeline::{execute_run, fit_dataset, fit_instances, growth_curve, size_points, RunRequest};
use passuntil::report::{
    fit_csv, json_bytes, plot_csv, predict_report, runs_csv, runs_json, ClassificationReport, FitReport,
};
use passuntil::scaling::TaskFitOptions;
use passuntil::store::{
    load_losses, load_run, load_suite, read_json, save_suite, write_atomic, ContentRef, LoadedRun, LogReplayOracle,
    RunDir, Suite,
};

use crate::cli::*;

/// Bad flag combinations detected after parsing; exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// What a successful command wants the process to report.
pub enum Status {
    Ok,
    Inconclusive,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_atomic(path, bytes)?;
    Ok(())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => write_file(path, bytes),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn load_runs(dirs: &[PathBuf]) -> Result<Vec<LoadedRun>> {
    dirs.iter()
        .map(|d| load_run(d).with_context(|| format!("loading run {}", d.display())))
        .collect()
}

fn run_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| "run".into())
}

fn check_synthetic(instances: &[TaskInstance], oracle: &SyntheticOracle) -> Result<()> {
    for inst in instances.iter().filter(|i| !i.excluded) {
        oracle.probability(inst)?;
    }
    Ok(())
}

fn evaluate(dir: &RunDir, request: &RunRequest, suite: &Suite, oracle: &dyn TaskOracle) -> Result<serde_json::Value> {
    let out = execute_run(dir, request, &suite.instances, oracle)?;
    Ok(serde_json::json!({
        "run_id": out.manifest.run_id,
        "run_dir": dir.root.display().to_string(),
        "model_id": out.manifest.model_id,
        "model_size": out.manifest.model_size,
        "instances": out.estimates.len(),
        "censored": out.dataset.censored,
        "mean_pu": out.dataset.mean_pu,
        "bootstrap_se": out.dataset.bootstrap_se,
        "new_trials": out.new_trials,
    }))
}

pub fn eval(a: &EvalArgs) -> Result<Status> {
    let (suite, digest) = load_suite(&a.suite)?;
    let request = RunRequest {
        run_id: a.run_id.clone().unwrap_or_else(|| run_name(&a.out)),
        model_id: a.model_id.clone(),
        model_size: a.model_size,
        suite: ContentRef {
            reference: a.suite.display().to_string(),
            digest,
        },
        config: EstimatorConfig {
            r_target: a.r,
            k_max: a.max_k,
            base_seed: a.seed,
            max_parallel: a.parallel,
            trial_retries: a.retries,
        },
        n_bootstrap: a.bootstrap,
    };
    let dir = RunDir::new(&a.out);
    let summary = match a.oracle {
        OracleKind::Synthetic => {
            let mut suite = suite;
            if let Some(model) = a.family.model().map_err(usage)? {
                for inst in &mut suite.instances {
                    inst.synthetic = Some(model.clone());
                }
            }
            let oracle = SyntheticOracle::new(a.model_size, None);
            check_synthetic(&suite.instances, &oracle)?;
            evaluate(&dir, &request, &suite, &oracle)?
        }
        OracleKind::Endpoint => {
            let url = a
                .endpoint
                .clone()
                .ok_or_else(|| usage("--oracle endpoint needs --endpoint <url>"))?;
            let mut config = EndpointConfig::new(url);
            config.auth_env = Some(a.auth_env.clone());
            config.temperature = a.temperature;
            config.max_tokens = a.max_tokens;
            config.stop = a.stop.clone();
            config.request_timeout_ms = a.request_timeout_ms;
            let oracle = EndpointOracle::http(config)?;
            evaluate(&dir, &request, &suite, &oracle)?
        }
        OracleKind::Replay => {
            let path = a
                .replay_log
                .as_ref()
                .ok_or_else(|| usage("--oracle replay needs --replay-log <trials.jsonl>"))?;
            let oracle = LogReplayOracle::load(path)?;
            evaluate(&dir, &request, &suite, &oracle)?
        }
    };
    emit(None, &json_bytes(&summary)?)?;
    Ok(Status::Ok)
}

pub fn fit(a: &FitArgs) -> Result<Status> {
    let runs = load_runs(&a.runs)?;
    let opts = TaskFitOptions {
        include_censored: a.include_censored,
        ..Default::default()
    };
    let points = size_points(&runs)?;
    let report = match a.level {
        FitLevel::Dataset => FitReport::dataset(&fit_dataset(&points, &opts)?, points),
        FitLevel::Instance => {
            let losses = a.losses.as_ref().map(load_losses).transpose()?;
            FitReport::instance(fit_instances(&runs, losses.as_ref(), &opts)?, points)?
        }
    };
    emit(a.out.as_deref(), &json_bytes(&report)?)?;
    Ok(Status::Ok)
}

pub fn predict(a: &PredictArgs) -> Result<Status> {
    let report: FitReport = read_json(&a.fit)?;
    report.validate()?;
    let prediction = predict_report(&report, a.target_n, a.actual)?;
    emit(a.out.as_deref(), &json_bytes(&prediction)?)?;
    Ok(Status::Ok)
}

pub fn classify(a: &ClassifyArgs) -> Result<Status> {
    let runs = load_runs(&a.runs)?;
    let curve = growth_curve(&runs)?;
    let tolerance = match a.tolerance {
        ToleranceRule::MedianSe => Tolerance::MedianSe {
            multiplier: a.tolerance_value.unwrap_or(2.0),
            floor: 1e-6,
        },
        ToleranceRule::PerDifference => Tolerance::PerDifference {
            z: a.tolerance_value.unwrap_or(3.0),
            floor: 1e-6,
        },
        ToleranceRule::Absolute => Tolerance::Absolute {
            value: a
                .tolerance_value
                .ok_or_else(|| usage("--tolerance absolute needs --tolerance-value"))?,
        },
    };
    let config = ClassifyConfig {
        tolerance,
        min_sign_consistency: a.min_sign_consistency,
        min_bootstrap_support: a.min_support,
        n_bootstrap: a.bootstrap,
        seed: a.seed,
        soft_min: Some(SoftMinOptions {
            temperature: a.soft_min_temperature,
            form: match a.soft_min_form {
                SoftMinFormArg::Minimum => SoftMinForm::Minimum,
                SoftMinFormArg::Negated => SoftMinForm::Negated,
            },
            ..Default::default()
        }),
    };
    let classification = classify_growth(&curve, &config)?;
    let verdict = classification.verdict;
    let report = ClassificationReport { curve, classification };
    if let Some(dir) = &a.out {
        write_file(&dir.join("classification.json"), &json_bytes(&report)?)?;
        write_file(&dir.join("classification.csv"), &plot_csv(&report)?)?;
    }
    let support = report
        .classification
        .bootstrap_support
        .map(|s| format!(" (bootstrap support {s})"))
        .unwrap_or_default();
    println!("{verdict}{support}");
    Ok(if verdict == GrowthVerdict::Inconclusive && a.strict {
        Status::Inconclusive
    } else {
        Status::Ok
    })
}

fn size_label(n: f64) -> String {
    format!("n{n:e}")
}

pub fn simulate(a: &SimulateArgs) -> Result<Status> {
    let model = a
        .family
        .model()
        .map_err(usage)?
        .ok_or_else(|| usage("simulate needs one of --p, --law, --steps, --circuits"))?;
    match a.emit {
        Emit::Pu => {
            let mut text = String::from("n,pu\n");
            for &n in &a.sizes {
                text.push_str(&format!("{n},{}\n", model.probability(n)?));
            }
            emit(a.out.as_deref(), text.as_bytes())?;
        }
        Emit::Trials => {
            let out = a
                .out
                .as_ref()
                .ok_or_else(|| usage("--emit trials needs --out <dir>"))?;
            if a.instances == 0 {
                return Err(usage("--instances must be at least 1"));
            }
            let suite = Suite {
                instances: (0..a.instances)
                    .map(|i| TaskInstance::synthetic(format!("sim-{i:04}"), model.clone()))
                    .collect(),
                extra: Default::default(),
            };
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let suite_path = out.join("suite.json");
            let digest = save_suite(&suite_path, &suite)?;
            let mut summaries = Vec::new();
            for &n in &a.sizes {
                let label = size_label(n);
                let dir = RunDir::new(out.join("runs").join(&label));
                let request = RunRequest {
                    run_id: label.clone(),
                    model_id: label,
                    model_size: n,
                    suite: ContentRef {
                        reference: suite_path.display().to_string(),
                        digest: digest.clone(),
                    },
                    config: EstimatorConfig {
                        max_parallel: a.parallel,
                        ..EstimatorConfig::new(a.r, a.max_k, a.seed)
                    },
                    n_bootstrap: 100,
                };
                let oracle = SyntheticOracle::new(n, None);
                summaries.push(evaluate(&dir, &request, &suite, &oracle)?);
            }
            emit(None, &json_bytes(&summaries)?)?;
        }
    }
    Ok(Status::Ok)
}

pub fn report(a: &ReportArgs) -> Result<Status> {
    let runs = load_runs(&a.runs)?;
    let fit: Option<FitReport> = a.fit.as_ref().map(|p| read_json(p)).transpose()?;
    if let Some(f) = &fit {
        f.validate()?;
    }
    let classification: Option<ClassificationReport> = a.classify.as_ref().map(|p| read_json(p)).transpose()?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let path = a.out.join(name);
        write_file(&path, &bytes)?;
        written.push(path.display().to_string());
        Ok(())
    };
    match a.format {
        Format::Csv => {
            put("runs.csv", runs_csv(&runs)?)?;
            if let Some(f) = &fit {
                put("fit.csv", fit_csv(f)?)?;
            }
            if let Some(c) = &classification {
                put("classification.csv", plot_csv(c)?)?;
            }
        }
        Format::Json => {
            put("runs.json", runs_json(&runs)?)?;
            if let Some(f) = &fit {
                put("fit.json", json_bytes(f)?)?;
            }
            if let Some(c) = &classification {
                put("classification.json", json_bytes(c)?)?;
            }
        }
    }
    for w in written {
        println!("{w}");
    }
    Ok(Status::Ok)
}
