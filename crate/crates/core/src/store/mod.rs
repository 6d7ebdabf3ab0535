//! On-disk artifacts: trial logs, run manifests, estimates, suites and
//! loss tables.
//!
//! A run directory holds `manifest.json`, `trials.jsonl`,
//! `estimates.json` and `dataset.json`. The trial log is the source of
//! truth; estimates can be recomputed from it with [`replay_estimates`].

mod log;
mod losses;
mod replay;
mod suite;

pub use self::log::{read_trial_log, RecoveredTail, TrialLog, TrialRecord, TrialVerdict};
pub use losses::{load_losses, parse_losses, save_losses, LossRecord, LossTable, LOSS_COLUMNS, LOSS_CONVENTION};
pub use replay::LogReplayOracle;
pub use suite::{load_suite, parse_suite, save_suite, Suite};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{replay_pass_until, DatasetEstimate, EstimatorConfig, PassUntilEstimate};
use crate::oracles::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRIALS_FILE: &str = "trials.jsonl";
pub const ESTIMATES_FILE: &str = "estimates.json";
pub const DATASET_FILE: &str = "dataset.json";

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Replaces `path` with `bytes` via a synced temporary file in the same
/// directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: Some(path.to_path_buf()),
        field: e.path().to_string(),
        line: Some(e.inner().line()),
        message: e.inner().to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceStatus {
    Pending,
    Complete,
    Censored,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceEntry {
    pub instance_id: String,
    pub status: InstanceStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentRef {
    pub reference: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub suite: ContentRef,
    pub model_id: String,
    /// Non-embedding parameter count.
    pub model_size: f64,
    pub estimator: EstimatorConfig,
    /// Oracle description and the digest of that description.
    pub oracle: ContentRef,
    pub loss_convention: String,
    pub software_version: String,
    /// Instances in suite order.
    pub instances: Vec<InstanceEntry>,
}

impl RunManifest {
    pub fn oracle_ref(description: &str) -> ContentRef {
        ContentRef {
            reference: description.to_string(),
            digest: sha256_hex(description.as_bytes()),
        }
    }

    pub fn status(&self, instance_id: &str) -> Option<InstanceStatus> {
        self.instances
            .iter()
            .find(|e| e.instance_id == instance_id)
            .map(|e| e.status)
    }

    pub fn set_status(&mut self, instance_id: &str, status: InstanceStatus) {
        if let Some(e) = self.instances.iter_mut().find(|e| e.instance_id == instance_id) {
            e.status = status;
        } else {
            self.instances.push(InstanceEntry {
                instance_id: instance_id.to_string(),
                status,
            });
        }
    }

    pub fn is_finished(&self) -> bool {
        self.instances
            .iter()
            .all(|e| matches!(e.status, InstanceStatus::Complete | InstanceStatus::Censored))
    }

    /// Checks that `other` describes the same experiment, so that a log
    /// written under `self` may be continued under `other`. Worker count
    /// is allowed to differ.
    pub fn check_resumable(&self, other: &RunManifest) -> Result<()> {
        let mismatch = |what: &str, a: String, b: String| Error::DigestMismatch {
            what: what.to_string(),
            expected: a,
            actual: b,
        };
        if self.suite.digest != other.suite.digest {
            return Err(mismatch("suite", self.suite.digest.clone(), other.suite.digest.clone()));
        }
        if self.oracle.digest != other.oracle.digest {
            return Err(mismatch("oracle", self.oracle.digest.clone(), other.oracle.digest.clone()));
        }
        let norm = |c: &EstimatorConfig| EstimatorConfig { max_parallel: 1, ..*c };
        if norm(&self.estimator) != norm(&other.estimator) {
            return Err(mismatch(
                "estimator config",
                format!("{:?}", self.estimator),
                format!("{:?}", other.estimator),
            ));
        }
        if self.model_id != other.model_id || self.model_size != other.model_size || self.run_id != other.run_id {
            return Err(mismatch(
                "model",
                format!("{} {} {}", self.run_id, self.model_id, self.model_size),
                format!("{} {} {}", other.run_id, other.model_id, other.model_size),
            ));
        }
        Ok(())
    }

    /// Recomputes the digest of the suite file and compares.
    pub fn verify_suite(&self, path: &Path) -> Result<()> {
        let actual = sha256_hex(&read_bytes(path)?);
        if actual != self.suite.digest {
            return Err(Error::DigestMismatch {
                what: format!("suite {}", path.display()),
                expected: self.suite.digest.clone(),
                actual,
            });
        }
        Ok(())
    }
}

/// Dataset-level summary written next to the estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDataset {
    pub run_id: String,
    pub model_id: String,
    pub model_size: f64,
    pub mean_pu: f64,
    pub bootstrap_se: f64,
    pub n_bootstrap: usize,
    pub n_instances: usize,
    pub censored: usize,
}

impl RunDataset {
    pub fn new(manifest: &RunManifest, dataset: &DatasetEstimate) -> Self {
        RunDataset {
            run_id: manifest.run_id.clone(),
            model_id: manifest.model_id.clone(),
            model_size: manifest.model_size,
            mean_pu: dataset.mean_pu,
            bootstrap_se: dataset.bootstrap_se,
            n_bootstrap: dataset.n_bootstrap,
            n_instances: dataset.per_instance.len(),
            censored: dataset.censored,
        }
    }
}

/// Paths inside one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn create(&self) -> Result<()> {
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn trials_path(&self) -> PathBuf {
        self.root.join(TRIALS_FILE)
    }

    pub fn estimates_path(&self) -> PathBuf {
        self.root.join(ESTIMATES_FILE)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.root.join(DATASET_FILE)
    }

    pub fn has_manifest(&self) -> bool {
        self.manifest_path().is_file()
    }

    pub fn read_manifest(&self) -> Result<RunManifest> {
        read_json(&self.manifest_path())
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<()> {
        write_json(&self.manifest_path(), manifest)
    }

    pub fn read_estimates(&self) -> Result<Vec<PassUntilEstimate>> {
        read_json(&self.estimates_path())
    }

    pub fn write_estimates(&self, estimates: &[PassUntilEstimate]) -> Result<()> {
        write_json(&self.estimates_path(), estimates)
    }

    pub fn read_dataset(&self) -> Result<RunDataset> {
        read_json(&self.dataset_path())
    }

    pub fn write_dataset(&self, dataset: &RunDataset) -> Result<()> {
        write_json(&self.dataset_path(), dataset)
    }

    pub fn open_log(&self, manifest: &RunManifest) -> Result<TrialLog> {
        TrialLog::open(self.trials_path(), &manifest.run_id, &manifest.model_id)
    }
}

/// Sampling progress of one instance reconstructed from the log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceProgress {
    pub known: BTreeMap<u64, bool>,
    /// Passes among indices `0..next_index`.
    pub passes: u32,
    /// First canonical index still to be sampled, or the stopping index
    /// when the instance is done.
    pub next_index: u64,
    pub done: bool,
}

fn progress(known: BTreeMap<u64, bool>, config: &EstimatorConfig) -> InstanceProgress {
    let mut passes = 0u32;
    let mut next = 0u64;
    while next < config.k_max && passes < config.r_target {
        match known.get(&next) {
            Some(&v) => {
                passes += v as u32;
                next += 1;
            }
            None => break,
        }
    }
    let done = passes >= config.r_target || next >= config.k_max;
    InstanceProgress {
        known,
        passes,
        next_index: next,
        done,
    }
}

/// A run reopened for continuation.
#[derive(Debug)]
pub struct ResumeState {
    pub manifest: RunManifest,
    pub progress: BTreeMap<String, InstanceProgress>,
    pub log: TrialLog,
}

/// Reopens a run: reads the manifest, recovers the log (dropping an
/// incomplete final line) and rebuilds per-instance progress.
pub fn resume_run(dir: &RunDir) -> Result<ResumeState> {
    let manifest = dir.read_manifest()?;
    let log = dir.open_log(&manifest)?;
    let progress = manifest
        .instances
        .iter()
        .map(|e| (e.instance_id.clone(), progress(log.known(&e.instance_id), &manifest.estimator)))
        .collect();
    Ok(ResumeState { manifest, progress, log })
}

/// Recomputes every finished instance's estimate from the trial log alone,
/// in manifest order. The log is not modified.
pub fn replay_estimates(dir: &RunDir) -> Result<Vec<PassUntilEstimate>> {
    let manifest = dir.read_manifest()?;
    let (records, _, _) = read_trial_log(&dir.trials_path())?;
    let mut known: BTreeMap<&str, BTreeMap<u64, bool>> = BTreeMap::new();
    for r in &records {
        if let Some(v) = r.passed() {
            known.entry(r.instance_id.as_str()).or_default().insert(r.trial_index, v);
        }
    }
    let empty = BTreeMap::new();
    let mut out = Vec::new();
    for entry in &manifest.instances {
        if !matches!(entry.status, InstanceStatus::Complete | InstanceStatus::Censored) {
            continue;
        }
        let k = known.get(entry.instance_id.as_str()).unwrap_or(&empty);
        let log_ref = format!("{TRIALS_FILE}#{}", entry.instance_id);
        let est = replay_pass_until(&entry.instance_id, &manifest.model_id, &manifest.estimator, k, &log_ref)?
            .ok_or_else(|| Error::CorruptLog {
                path: dir.trials_path(),
                line: records.len(),
                message: format!("log ends before instance {} is determined", entry.instance_id),
            })?;
        out.push(est);
    }
    Ok(out)
}

/// A finished run as consumed by fitting and reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub estimates: Vec<PassUntilEstimate>,
}

pub fn load_run(dir: impl AsRef<Path>) -> Result<LoadedRun> {
    let run = RunDir::new(dir.as_ref());
    Ok(LoadedRun {
        dir: run.root.clone(),
        manifest: run.read_manifest()?,
        estimates: run.read_estimates()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{run_pass_until, resume_pass_until, TrialSink};
    use crate::oracles::{SyntheticModel, SyntheticOracle, TaskInstance};

    fn manifest(ids: &[&str], config: EstimatorConfig) -> RunManifest {
        RunManifest {
            run_id: "r1".into(),
            suite: ContentRef {
                reference: "suite.json".into(),
                digest: sha256_hex(b"suite"),
            },
            model_id: "m".into(),
            model_size: 1e9,
            estimator: config,
            oracle: RunManifest::oracle_ref("synthetic"),
            loss_convention: LOSS_CONVENTION.into(),
            software_version: env!("CARGO_PKG_VERSION").into(),
            instances: ids
                .iter()
                .map(|id| InstanceEntry {
                    instance_id: id.to_string(),
                    status: InstanceStatus::Pending,
                })
                .collect(),
        }
    }

    /// Stops a run after a fixed number of recorded trials.
    struct Interrupting<'a> {
        inner: &'a mut TrialLog,
        left: usize,
    }

    impl TrialSink for Interrupting<'_> {
        fn record(&mut self, e: crate::estimator::TrialEvent<'_>) -> Result<()> {
            if self.left == 0 {
                return Err(Error::InvalidConfig("interrupted".into()));
            }
            self.left -= 1;
            self.inner.record(e)
        }
        fn flush(&mut self) -> Result<()> {
            self.inner.flush()
        }
        fn log_ref(&self, id: &str) -> String {
            self.inner.log_ref(id)
        }
    }

    #[test]
    fn interrupted_run_resumes_to_reference() {
        let config = EstimatorConfig::new(3, 10_000, 11).with_parallel(4);
        let inst = TaskInstance::synthetic("q", SyntheticModel::Fixed { p: 0.01 });
        let oracle = SyntheticOracle::new(1e9, None);

        let ref_dir = tempfile::tempdir().unwrap();
        let reference = {
            let rd = RunDir::new(ref_dir.path());
            let m = manifest(&["q"], config);
            rd.write_manifest(&m).unwrap();
            let mut log = rd.open_log(&m).unwrap();
            run_pass_until(&oracle, &inst, "m", &config, &mut log).unwrap()
        };

        for cut in [0usize, 1, 57, 150] {
            let dir = tempfile::tempdir().unwrap();
            let rd = RunDir::new(dir.path());
            let m = manifest(&["q"], config);
            rd.write_manifest(&m).unwrap();
            {
                let mut log = rd.open_log(&m).unwrap();
                let mut sink = Interrupting { inner: &mut log, left: cut };
                assert!(run_pass_until(&oracle, &inst, "m", &config, &mut sink).is_err());
                log.sync().unwrap();
            }
            let mut state = resume_run(&rd).unwrap();
            let p = &state.progress["q"];
            assert_eq!(p.next_index as usize, cut.min(p.known.len()));
            let known = p.known.clone();
            let est = resume_pass_until(&oracle, &inst, "m", &config, &known, &mut state.log).unwrap();
            assert_eq!(est, reference, "cut {cut}");
            // a resumed log holds exactly the reference trials
            assert_eq!(state.log.known("q").len(), std::fs::read_to_string(ref_dir.path().join(TRIALS_FILE)).unwrap().lines().count());
        }
    }

    #[test]
    fn replay_matches_stored_estimates() {
        let config = EstimatorConfig::new(2, 5_000, 3);
        let ids = ["a", "b", "c"];
        let dir = tempfile::tempdir().unwrap();
        let rd = RunDir::new(dir.path());
        let mut m = manifest(&ids, config);
        let oracle = SyntheticOracle::new(1e9, None);
        let mut log = rd.open_log(&m).unwrap();
        let mut estimates = Vec::new();
        for (id, p) in ids.iter().zip([0.3, 0.002, 1e-6]) {
            let inst = TaskInstance::synthetic(*id, SyntheticModel::Fixed { p });
            let est = run_pass_until(&oracle, &inst, "m", &config, &mut log).unwrap();
            m.set_status(id, if est.censored { InstanceStatus::Censored } else { InstanceStatus::Complete });
            estimates.push(est);
        }
        rd.write_manifest(&m).unwrap();
        rd.write_estimates(&estimates).unwrap();
        assert!(m.is_finished());
        assert!(estimates[2].censored);
        assert_eq!(replay_estimates(&rd).unwrap(), rd.read_estimates().unwrap());
    }

    #[test]
    fn resumable_checks() {
        let config = EstimatorConfig::new(2, 100, 1);
        let a = manifest(&["x"], config);
        let mut b = a.clone();
        b.estimator.max_parallel = 8;
        assert!(a.check_resumable(&b).is_ok());
        b.suite.digest = sha256_hex(b"other");
        assert!(matches!(a.check_resumable(&b), Err(Error::DigestMismatch { .. })));
        let mut c = a.clone();
        c.estimator.base_seed = 2;
        assert!(a.check_resumable(&c).is_err());
    }

    #[test]
    fn atomic_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rd = RunDir::new(dir.path().join("runs").join("r1"));
        let m = manifest(&["x"], EstimatorConfig::default());
        rd.write_manifest(&m).unwrap();
        assert_eq!(rd.read_manifest().unwrap(), m);
        std::fs::write(rd.manifest_path(), "{\n\"run_id\": 3\n}").unwrap();
        assert!(matches!(rd.read_manifest(), Err(Error::Schema { line: Some(2), .. })));
    }
}
