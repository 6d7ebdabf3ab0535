use std::path::Path;
use std::process::{Command, Output};

use passuntil::report::FitReport;
use passuntil::scaling::predict_pu;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_passuntil"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_suite(dir: &Path, n: usize) {
    let items: Vec<Value> = (0..n)
        .map(|i| {
            serde_json::json!({
                "instance_id": format!("q{i}"),
                "prompt": "2+2=",
                "verifier": {"kind": "exact-substring", "targets": ["4"]},
            })
        })
        .collect();
    std::fs::write(dir.join("suite.json"), serde_json::to_string_pretty(&items).unwrap()).unwrap();
}

fn read(path: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn eval_certain_instances() {
    let t = tempfile::tempdir().unwrap();
    write_suite(t.path(), 3);
    let args = [
        "eval", "--suite", "suite.json", "--model-id", "m", "--model-size", "1e9", "--r", "1", "--p", "1",
        "--out", "runs/a",
    ];
    let summary: Value = serde_json::from_str(&ok(t.path(), &args)).unwrap();
    assert_eq!(summary["new_trials"], 3);
    let est = read(t.path().join("runs/a/estimates.json"));
    let est = est.as_array().unwrap();
    assert_eq!(est.len(), 3);
    for e in est {
        assert_eq!(e["pu"], 1.0);
        assert_eq!(e["k_used"], 1);
    }
    let manifest = read(t.path().join("runs/a/manifest.json"));
    assert_eq!(manifest["instances"][0]["status"], "complete");
    assert_eq!(manifest["estimator"]["r_target"], 1);

    let again: Value = serde_json::from_str(&ok(t.path(), &args)).unwrap();
    assert_eq!(again["new_trials"], 0);
}

#[test]
fn eval_all_censored() {
    let t = tempfile::tempdir().unwrap();
    write_suite(t.path(), 4);
    ok(
        t.path(),
        &[
            "eval", "--suite", "suite.json", "--model-id", "m", "--model-size", "1e9", "--max-k", "100", "--p",
            "1e-6", "--out", "runs/c",
        ],
    );
    for e in read(t.path().join("runs/c/estimates.json")).as_array().unwrap() {
        assert_eq!(e["censored"], true);
        assert_eq!(e["pu"], 0.0);
        assert_eq!(e["k_used"], 100);
    }
    let manifest = read(t.path().join("runs/c/manifest.json"));
    assert!(manifest["instances"].as_array().unwrap().iter().all(|i| i["status"] == "censored"));
}

#[test]
fn changed_suite_refuses_resume() {
    let t = tempfile::tempdir().unwrap();
    write_suite(t.path(), 2);
    let args = [
        "eval", "--suite", "suite.json", "--model-id", "m", "--model-size", "1e9", "--p", "0.5", "--out", "run",
    ];
    ok(t.path(), &args);
    write_suite(t.path(), 3);
    assert_eq!(code(&run(t.path(), &args)), 3);
}

#[test]
fn simulate_pu_values() {
    let t = tempfile::tempdir().unwrap();
    let c = std::f64::consts::LN_2 * 1e9f64.powf(0.3);
    let out = ok(t.path(), &["simulate", "--law", &format!("c={c},alpha=0.3"), "--sizes", "1e9"]);
    let line = out.lines().nth(1).unwrap();
    let pu: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
    assert!((pu - 0.5).abs() < 1e-12, "{pu}");

    let sizes = "1e8,1e9,1e10";
    let one = |law: &str| -> Vec<f64> {
        ok(t.path(), &["simulate", "--law", law, "--sizes", sizes])
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect()
    };
    let a = one("c=20,alpha=0.1");
    let b = one("c=3000,alpha=0.4");
    let both: Vec<f64> = ok(t.path(), &["simulate", "--circuits", "c=20,alpha=0.1;c=3000,alpha=0.4", "--sizes", sizes])
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    for i in 0..3 {
        assert_eq!(both[i], a[i].max(b[i]));
    }
}

#[test]
fn simulated_trials_replay_bit_for_bit() {
    let t = tempfile::tempdir().unwrap();
    ok(
        t.path(),
        &[
            "simulate", "--law", "c=400,alpha=0.3", "--sizes", "1e9", "--emit", "trials", "--instances", "5", "--r",
            "2", "--seed", "7", "--out", "sim",
        ],
    );
    let run_dir = t.path().join("sim/runs/n1e9");
    let common = [
        "eval", "--suite", "sim/suite.json", "--model-id", "n1e9", "--model-size", "1e9", "--r", "2", "--seed", "7",
        "--run-id", "n1e9",
    ];
    let mut replay = common.to_vec();
    replay.extend(["--oracle", "replay", "--replay-log", "sim/runs/n1e9/trials.jsonl", "--out", "replayed"]);
    ok(t.path(), &replay);
    let mut direct = common.to_vec();
    direct.extend(["--out", "direct"]);
    ok(t.path(), &direct);
    let reference = std::fs::read(run_dir.join("estimates.json")).unwrap();
    assert_eq!(std::fs::read(t.path().join("replayed/estimates.json")).unwrap(), reference);
    assert_eq!(std::fs::read(t.path().join("direct/estimates.json")).unwrap(), reference);
}

fn simulate_runs(dir: &Path, family: &[&str], sizes: &str, r: &str, instances: &str, out: &str) -> Vec<String> {
    let mut args = vec!["simulate"];
    args.extend_from_slice(family);
    args.extend([
        "--sizes", sizes, "--emit", "trials", "--r", r, "--instances", instances, "--seed", "3", "--parallel", "4",
        "--out", out,
    ]);
    ok(dir, &args);
    let mut runs: Vec<String> = std::fs::read_dir(dir.join(out).join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path().display().to_string())
        .collect();
    runs.sort();
    runs
}

#[test]
fn two_sizes_fit_exactly() {
    let t = tempfile::tempdir().unwrap();
    let runs = simulate_runs(t.path(), &["--law", "c=2000,alpha=0.35"], "1e8,1e10", "16", "2", "sim");
    let fit_out = ok(t.path(), &["fit", "--runs", &runs.join(","), "--out", "fit.json"]);
    assert!(fit_out.is_empty());
    let report: FitReport = serde_json::from_value(read(t.path().join("fit.json"))).unwrap();
    assert_eq!(report.points_used, 2);
    assert!(report.rss < 1e-20);
    for p in &report.points {
        assert!((report.predict(p.n).unwrap() / p.mean_pu - 1.0).abs() < 1e-12);
    }
}

#[test]
fn fit_needs_two_sizes() {
    let t = tempfile::tempdir().unwrap();
    let runs = simulate_runs(t.path(), &["--p", "0.25"], "1e8", "1", "3", "sim");
    assert_eq!(code(&run(t.path(), &["fit", "--runs", &runs[0]])), 3);
}

#[test]
fn dataset_fit_recovers_law() {
    let t = tempfile::tempdir().unwrap();
    let runs = simulate_runs(t.path(), &["--law", "c=2000,alpha=0.35"], "1e8,3e8,1e9,3e9", "64", "4", "sim");
    ok(t.path(), &["fit", "--runs", &runs.join(","), "--out", "fit.json"]);
    let report = read(t.path().join("fit.json"));
    assert_eq!(report["fit_kind"], "dataset");
    let alpha = report["params"]["alpha"].as_f64().unwrap();
    assert!((alpha / 0.35 - 1.0).abs() < 0.1, "{alpha}");
    ok(t.path(), &["fit", "--level", "instance", "--runs", &runs.join(","), "--out", "ifit.json"]);
    let inst = read(t.path().join("ifit.json"));
    assert_eq!(inst["fit_kind"], "instance");
    assert_eq!(inst["params"]["instances"].as_array().unwrap().len(), 4);
}

fn fit_report_file(dir: &Path, c: f64, alpha: f64) {
    let report = serde_json::json!({
        "fit_kind": "dataset",
        "params": {"c": c, "alpha": alpha},
        "rss": 0.0,
        "points_used": 6,
        "points_excluded": 0,
        "points": [],
    });
    std::fs::write(dir.join("fit.json"), report.to_string()).unwrap();
}

#[test]
fn predict_deviation() {
    let t = tempfile::tempdir().unwrap();
    let alpha = 0.3;
    let target = 2.45e9f64;
    for (predicted, actual, expect) in [(0.05987, 0.05990, 0.0005), (0.06550, 0.05990, 0.0935)] {
        let c = -(predicted as f64).ln() * target.powf(alpha);
        fit_report_file(t.path(), c, alpha);
        let out: Value = serde_json::from_str(&ok(
            t.path(),
            &["predict", "--fit", "fit.json", "--target-n", "2.45e9", "--actual", &actual.to_string()],
        ))
        .unwrap();
        let got = out["predicted_pu"].as_f64().unwrap();
        assert!((got - predicted).abs() < 1e-12);
        let dev = out["relative_deviation"].as_f64().unwrap();
        assert!((dev - expect).abs() < 1e-4, "{dev}");
    }
    fit_report_file(t.path(), 100.0, alpha);
    let out: Value = serde_json::from_str(&ok(t.path(), &["predict", "--fit", "fit.json", "--target-n", "1e9"])).unwrap();
    let p = out["predicted_pu"].as_f64().unwrap();
    let same: Value = serde_json::from_str(&ok(
        t.path(),
        &["predict", "--fit", "fit.json", "--target-n", "1e9", "--actual", &p.to_string()],
    ))
    .unwrap();
    assert_eq!(same["relative_deviation"], 0.0);
}

fn classify_family(family: &[&str]) -> String {
    let t = tempfile::tempdir().unwrap();
    let runs = simulate_runs(t.path(), family, "2.4e7,2.9e8,3.6e9", "32", "20", "sim");
    ok(
        t.path(),
        &["classify", "--runs", &runs.join(","), "--tolerance", "per-difference", "--out", "cls"],
    )
    .split_whitespace()
    .next()
    .unwrap()
    .to_string()
}

#[test]
fn classify_synthetic_families() {
    // PU from 0.002 to 0.5 over the three sizes; the bend sits at the middle size
    assert_eq!(classify_family(&["--law", "c=10571,alpha=0.437752"]), "scaling-law");
    assert_eq!(
        classify_family(&["--steps", "c=1.38228e7,alpha=0.860027;c=1.07635,alpha=0.02"]),
        "sub-scaling"
    );
    assert_eq!(
        classify_family(&["--circuits", "c=8.73007,alpha=0.02;c=9.40842e7,alpha=0.851029"]),
        "super-scaling"
    );
}

#[test]
fn strict_inconclusive_exits_5() {
    let t = tempfile::tempdir().unwrap();
    let runs = simulate_runs(t.path(), &["--p", "0.3"], "1e8,2e8,4e8,8e8,1.6e9", "1", "6", "sim");
    let args = [
        "classify", "--runs", &runs.join(","), "--tolerance", "absolute", "--tolerance-value", "1e-6",
        "--min-support", "1.0", "--strict",
    ];
    let out = run(t.path(), &args);
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stdout));
    let relaxed = run(t.path(), &args[..args.len() - 1]);
    assert_eq!(code(&relaxed), 0);
}

#[test]
fn report_outputs() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["report", "--format", "csv", "--out", "empty"]);
    let header = std::fs::read_to_string(t.path().join("empty/runs.csv")).unwrap();
    assert_eq!(header.lines().count(), 1);
    assert!(header.starts_with("run_id,"));

    let runs = simulate_runs(t.path(), &["--law", "c=2000,alpha=0.35"], "1e8,1e9,1e10", "8", "3", "sim");
    ok(t.path(), &["fit", "--runs", &runs.join(","), "--out", "fit.json"]);
    ok(
        t.path(),
        &["classify", "--runs", &runs.join(","), "--out", "cls"],
    );
    for fmt in ["csv", "json"] {
        let args = [
            "report", "--run", &runs.join(","), "--fit", "fit.json", "--classify", "cls/classification.json",
            "--format", fmt,
        ];
        let mut a1 = args.to_vec();
        a1.extend(["--out", "r1"]);
        let mut a2 = args.to_vec();
        a2.extend(["--out", "r2"]);
        ok(t.path(), &a1);
        ok(t.path(), &a2);
        for name in ["runs", "fit", "classification"] {
            let f = format!("{name}.{fmt}");
            assert_eq!(
                std::fs::read(t.path().join("r1").join(&f)).unwrap(),
                std::fs::read(t.path().join("r2").join(&f)).unwrap(),
                "{f}"
            );
        }
    }
    let report: FitReport = serde_json::from_value(read(t.path().join("fit.json"))).unwrap();
    let fit = match report.params {
        passuntil::report::FitParams::Dataset { c, alpha } => passuntil::scaling::TaskScalingFit {
            c,
            alpha,
            residual_sum_squares: report.rss,
            n_points: report.points_used,
            n_excluded: report.points_excluded,
        },
        _ => unreachable!(),
    };
    let csv = std::fs::read_to_string(t.path().join("r1/fit.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "run_id,n,log_n,pu_observed,pu_se,pu_fitted");
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let n: f64 = cols[1].parse().unwrap();
        let fitted: f64 = cols[5].parse().unwrap();
        assert_eq!(fitted, predict_pu(&fit, n).unwrap());
    }
    let plot = std::fs::read_to_string(t.path().join("r1/classification.csv")).unwrap();
    assert_eq!(plot.lines().next().unwrap(), "log_n,f_observed,f_se,f_linear_fit,f_softmin_fit");
    assert_eq!(plot.lines().count(), 4);
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(t.path(), &["fit", "--bogus"])), 2);
    assert_eq!(code(&run(t.path(), &["simulate", "--sizes", "1e9"])), 2);
    assert_eq!(code(&run(t.path(), &["simulate", "--law", "c=1", "--sizes", "1e9"])), 2);
    assert_eq!(code(&run(t.path(), &["fit", "--runs", "missing"])), 3);
    assert_eq!(code(&run(t.path(), &["report", "--run", "missing"])), 3);
    std::fs::write(t.path().join("bad.json"), "{\"fit_kind\": 1}").unwrap();
    assert_eq!(code(&run(t.path(), &["predict", "--fit", "bad.json", "--target-n", "1e9"])), 3);
    write_suite(t.path(), 1);
    // nothing listens on port 9: every trial errors and the instance aborts
    let out = run(
        t.path(),
        &[
            "eval", "--suite", "suite.json", "--oracle", "endpoint", "--endpoint", "http://127.0.0.1:9/gen",
            "--model-id", "m", "--model-size", "1e9", "--retries", "0", "--out", "ep",
        ],
    );
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read(t.path().join("ep/manifest.json"));
    assert_eq!(manifest["instances"][0]["status"], "aborted");
}

#[test]
fn config_file_supplies_flags() {
    let t = tempfile::tempdir().unwrap();
    write_suite(t.path(), 2);
    std::fs::write(
        t.path().join("cfg.json"),
        r#"{"suite": "suite.json", "model_id": "m", "model-size": 1e9, "r": 3, "p": 0.5, "max_k": 1000}"#,
    )
    .unwrap();
    ok(t.path(), &["eval", "--config", "cfg.json", "--out", "run", "--r", "2"]);
    let manifest = read(t.path().join("run/manifest.json"));
    assert_eq!(manifest["estimator"]["r_target"], 2);
    assert_eq!(manifest["estimator"]["k_max"], 1000);
}
