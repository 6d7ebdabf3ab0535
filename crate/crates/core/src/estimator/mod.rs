//! The PassUntil estimator: sample until `r` passes, report `r / K`.

mod bootstrap;
mod seed;

pub use bootstrap::{aggregate_dataset, bootstrap_se, DatasetEstimate};
pub use seed::{instance_key, trial_seed, trial_seed_from_key};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, TrialError};
use crate::oracles::{TaskInstance, TaskOracle, TrialOutcome};
use crate::scalar::Scalar;

/// Default cap on trials per instance.
pub const DEFAULT_K_MAX: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Passes required before sampling stops.
    pub r_target: u32,
    /// Cap on trials per instance; reaching it censors the estimate.
    pub k_max: u64,
    pub base_seed: u64,
    /// Worker count. Has no effect on results.
    pub max_parallel: usize,
    /// Extra attempts for a trial that errors before the instance aborts.
    #[serde(default = "default_trial_retries")]
    pub trial_retries: u32,
}

fn default_trial_retries() -> u32 {
    2
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            r_target: 1,
            k_max: DEFAULT_K_MAX,
            base_seed: 0,
            max_parallel: 1,
            trial_retries: default_trial_retries(),
        }
    }
}

impl EstimatorConfig {
    pub fn new(r_target: u32, k_max: u64, base_seed: u64) -> Self {
        EstimatorConfig {
            r_target,
            k_max,
            base_seed,
            ..Default::default()
        }
    }

    pub fn with_parallel(mut self, workers: usize) -> Self {
        self.max_parallel = workers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_target < 1 {
            return Err(Error::InvalidConfig("r_target must be at least 1".into()));
        }
        if self.k_max < self.r_target as u64 {
            return Err(Error::InvalidConfig(format!(
                "k_max={} must be at least r_target={}",
                self.k_max, self.r_target
            )));
        }
        if self.max_parallel < 1 {
            return Err(Error::InvalidConfig("max_parallel must be at least 1".into()));
        }
        Ok(())
    }
}

/// One instance's measured pass probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassUntilEstimate {
    pub instance_id: String,
    pub model_id: String,
    pub r_target: u32,
    pub r_observed: u32,
    pub k_used: u64,
    pub k_max: u64,
    /// The cap was reached before `r_target` passes.
    pub censored: bool,
    pub pu: f64,
    pub trial_log_ref: String,
}

impl PassUntilEstimate {
    fn finish(
        instance_id: &str,
        model_id: &str,
        config: &EstimatorConfig,
        r_observed: u32,
        k_used: u64,
        log_ref: String,
    ) -> Self {
        let censored = r_observed < config.r_target;
        PassUntilEstimate {
            instance_id: instance_id.to_string(),
            model_id: model_id.to_string(),
            r_target: config.r_target,
            r_observed,
            k_used,
            k_max: config.k_max,
            censored,
            pu: r_observed as f64 / k_used as f64,
            trial_log_ref: log_ref,
        }
    }

    /// Checks the estimate's internal consistency.
    pub fn check_invariants(&self) -> Result<()> {
        let ok = if self.censored {
            self.k_used == self.k_max
                && self.r_observed < self.r_target
                && self.pu == self.r_observed as f64 / self.k_max as f64
        } else {
            self.r_observed == self.r_target && self.pu == self.r_target as f64 / self.k_used as f64
        };
        if ok && (0.0..=1.0).contains(&self.pu) && self.k_used >= self.r_observed as u64 {
            Ok(())
        } else {
            Err(Error::domain(format!("inconsistent estimate {self:?}")))
        }
    }
}

/// `r / k`, the PassUntil score.
pub fn pu_value<T: Scalar>(r: u64, k: u64) -> Result<T> {
    if r < 1 || k < r {
        return Err(Error::domain(format!("pu_value needs k >= r >= 1, got r={r}, k={k}")));
    }
    let r = T::from_u64(r).ok_or_else(|| Error::domain("r not representable"))?;
    let k = T::from_u64(k).ok_or_else(|| Error::domain("k not representable"))?;
    Ok(r / k)
}

/// One attempt at one canonical trial index, as handed to a [`TrialSink`].
#[derive(Debug, Clone, Copy)]
pub struct TrialEvent<'a> {
    pub instance_id: &'a str,
    pub trial_index: u64,
    pub seed: u64,
    pub attempt: u32,
    pub result: &'a Result<TrialOutcome, TrialError>,
}

/// Receives every trial the estimator issues, in canonical order.
pub trait TrialSink {
    fn record(&mut self, event: TrialEvent<'_>) -> Result<()>;

    /// Called before an estimate is returned; persistent sinks make the
    /// recorded trials durable here.
    fn flush(&mut self) -> Result<()> {
        Ok(())
    }

    fn log_ref(&self, instance_id: &str) -> String {
        format!("memory#{instance_id}")
    }
}

/// Discards trials.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl TrialSink for NullSink {
    fn record(&mut self, _: TrialEvent<'_>) -> Result<()> {
        Ok(())
    }
}

/// Keeps `(instance_id, trial_index, verdict)`; `None` marks an error.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub trials: Vec<(String, u64, Option<bool>)>,
}

impl TrialSink for MemorySink {
    fn record(&mut self, e: TrialEvent<'_>) -> Result<()> {
        self.trials.push((
            e.instance_id.to_string(),
            e.trial_index,
            e.result.as_ref().ok().map(|o| o.passed),
        ));
        Ok(())
    }
}

type Attempts = Vec<Result<TrialOutcome, TrialError>>;

/// Issues trials for one instance in waves of `max_parallel` canonical
/// indices. Known verdicts (from a resumed log) are reused instead of being
/// re-sampled.
struct TrialRunner<'a, O: ?Sized> {
    oracle: &'a O,
    instance: &'a TaskInstance,
    config: &'a EstimatorConfig,
    key: u64,
    pool: Option<rayon::ThreadPool>,
}

impl<'a, O: TaskOracle + ?Sized> TrialRunner<'a, O> {
    fn new(oracle: &'a O, instance: &'a TaskInstance, config: &'a EstimatorConfig) -> Result<Self> {
        config.validate()?;
        if instance.excluded {
            return Err(Error::domain(format!(
                "instance {} is excluded and must not be sampled",
                instance.instance_id
            )));
        }
        let pool = if config.max_parallel > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.max_parallel)
                    .build()
                    .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(TrialRunner {
            oracle,
            instance,
            config,
            key: instance_key(config.base_seed, &instance.instance_id),
            pool,
        })
    }

    fn attempt_trial(&self, index: u64) -> Attempts {
        let seed = trial_seed_from_key(self.key, index);
        let mut attempts = Vec::with_capacity(1);
        for _ in 0..=self.config.trial_retries {
            let res = self.oracle.trial(self.instance, index, seed);
            let done = res.is_ok();
            attempts.push(res);
            if done {
                break;
            }
        }
        attempts
    }

    fn run_wave(&self, indices: &[u64]) -> Vec<Attempts> {
        match &self.pool {
            Some(pool) if indices.len() > 1 => {
                pool.install(|| indices.par_iter().map(|&i| self.attempt_trial(i)).collect())
            }
            _ => indices.iter().map(|&i| self.attempt_trial(i)).collect(),
        }
    }

    /// Drives trials in canonical order, calling `visit` with each index's
    /// final verdict until it returns `false` or `limit` is reached.
    /// Returns the number of indices visited.
    fn drive(
        &self,
        limit: u64,
        known: &BTreeMap<u64, bool>,
        sink: &mut dyn TrialSink,
        mut visit: impl FnMut(u64, bool) -> bool,
    ) -> Result<u64> {
        let wave = self.config.max_parallel as u64;
        let mut next = 0u64;
        while next < limit {
            let end = (next + wave).min(limit);
            let fresh: Vec<u64> = (next..end).filter(|i| !known.contains_key(i)).collect();
            let results = self.run_wave(&fresh);
            let mut outcome: BTreeMap<u64, std::result::Result<bool, TrialError>> = BTreeMap::new();
            for (&index, attempts) in fresh.iter().zip(&results) {
                let seed = trial_seed_from_key(self.key, index);
                for (attempt, res) in attempts.iter().enumerate() {
                    sink.record(TrialEvent {
                        instance_id: &self.instance.instance_id,
                        trial_index: index,
                        seed,
                        attempt: attempt as u32,
                        result: res,
                    })?;
                }
                let last = attempts.last().expect("at least one attempt");
                outcome.insert(index, last.as_ref().map(|o| o.passed).map_err(Clone::clone));
            }
            for index in next..end {
                let verdict = match known.get(&index) {
                    Some(&v) => v,
                    None => match outcome.remove(&index).expect("fresh index has an outcome") {
                        Ok(v) => v,
                        Err(source) => {
                            sink.flush()?;
                            return Err(Error::Incomplete {
                                instance_id: self.instance.instance_id.clone(),
                                trial_index: index,
                                source,
                            });
                        }
                    },
                };
                if !visit(index, verdict) {
                    return Ok(index + 1);
                }
            }
            next = end;
        }
        Ok(limit)
    }
}

/// Samples `instance` until `r_target` passes or `k_max` trials.
///
/// The stopping index is defined over canonical trial indices, so the
/// result does not depend on `max_parallel`. Trials past the stopping
/// index that were already in flight are logged but ignored.
pub fn run_pass_until<O: TaskOracle + ?Sized>(
    oracle: &O,
    instance: &TaskInstance,
    model_id: &str,
    config: &EstimatorConfig,
    sink: &mut dyn TrialSink,
) -> Result<PassUntilEstimate> {
    resume_pass_until(oracle, instance, model_id, config, &BTreeMap::new(), sink)
}

/// As [`run_pass_until`], reusing verdicts already recorded for this
/// instance. Only indices missing from `known` are sampled and logged.
pub fn resume_pass_until<O: TaskOracle + ?Sized>(
    oracle: &O,
    instance: &TaskInstance,
    model_id: &str,
    config: &EstimatorConfig,
    known: &BTreeMap<u64, bool>,
    sink: &mut dyn TrialSink,
) -> Result<PassUntilEstimate> {
    let runner = TrialRunner::new(oracle, instance, config)?;
    let mut passes = 0u32;
    let visited = runner.drive(config.k_max, known, sink, |_, passed| {
        passes += passed as u32;
        passes < config.r_target
    })?;
    sink.flush()?;
    Ok(PassUntilEstimate::finish(
        &instance.instance_id,
        model_id,
        config,
        passes,
        visited,
        sink.log_ref(&instance.instance_id),
    ))
}

/// Recomputes an estimate purely from recorded verdicts. `None` when the
/// record stops before the estimate is determined.
pub fn replay_pass_until(
    instance_id: &str,
    model_id: &str,
    config: &EstimatorConfig,
    known: &BTreeMap<u64, bool>,
    log_ref: &str,
) -> Result<Option<PassUntilEstimate>> {
    config.validate()?;
    let mut passes = 0u32;
    for index in 0..config.k_max {
        let Some(&passed) = known.get(&index) else {
            return Ok(None);
        };
        passes += passed as u32;
        if passes == config.r_target {
            return Ok(Some(PassUntilEstimate::finish(
                instance_id,
                model_id,
                config,
                passes,
                index + 1,
                log_ref.to_string(),
            )));
        }
    }
    Ok(Some(PassUntilEstimate::finish(
        instance_id,
        model_id,
        config,
        passes,
        config.k_max,
        log_ref.to_string(),
    )))
}

/// Outcome of fixed-budget random sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedBudgetRecord {
    pub passes: u64,
    pub trials: u64,
    pub passed_any: bool,
}

/// Issues exactly `k` seeded trials (plain random sampling). Seeds follow the
/// same derivation as [`run_pass_until`].
pub fn run_fixed_budget<O: TaskOracle + ?Sized>(
    oracle: &O,
    instance: &TaskInstance,
    k: u64,
    config: &EstimatorConfig,
    sink: &mut dyn TrialSink,
) -> Result<FixedBudgetRecord> {
    if k < 1 {
        return Err(Error::InvalidConfig("fixed budget k must be at least 1".into()));
    }
    let cfg = EstimatorConfig {
        r_target: 1,
        k_max: k,
        ..*config
    };
    let runner = TrialRunner::new(oracle, instance, &cfg)?;
    let mut passes = 0u64;
    let trials = runner.drive(k, &BTreeMap::new(), sink, |_, passed| {
        passes += passed as u64;
        true
    })?;
    sink.flush()?;
    Ok(FixedBudgetRecord {
        passes,
        trials,
        passed_any: passes > 0,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU64, Ordering};

    use super::*;
    use crate::oracles::{SyntheticModel, SyntheticOracle};

    fn fixed(id: &str, p: f64) -> TaskInstance {
        TaskInstance::synthetic(id, SyntheticModel::Fixed { p })
    }

    fn oracle() -> SyntheticOracle {
        SyntheticOracle::new(1e9, None)
    }

    /// Passes exactly at the listed canonical indices.
    struct Scripted(Vec<u64>);

    impl TaskOracle for Scripted {
        fn trial(&self, _: &TaskInstance, i: u64, _: u64) -> Result<TrialOutcome, TrialError> {
            Ok(TrialOutcome::new(self.0.contains(&i), "", 0))
        }
        fn describe(&self) -> String {
            "scripted".into()
        }
    }

    #[test]
    fn pu_value_is_r_over_k() {
        assert_eq!(pu_value::<f64>(1, 1).unwrap(), 1.0);
        assert_eq!(pu_value::<f64>(2, 40).unwrap(), 0.05);
        assert_eq!(pu_value::<f64>(1, 1600).unwrap(), 0.000625);
        assert!(pu_value::<f64>(3, 2).is_err());
        assert!(pu_value::<f64>(0, 2).is_err());
        assert!((pu_value::<f32>(2, 40).unwrap() - 0.05).abs() < 1e-8);
    }

    #[test]
    fn certain_pass_stops_at_first_trial() {
        let est = run_pass_until(&oracle(), &fixed("a", 1.0), "m", &EstimatorConfig::default(), &mut NullSink)
            .unwrap();
        assert_eq!((est.k_used, est.pu, est.censored), (1, 1.0, false));
        est.check_invariants().unwrap();
    }

    #[test]
    fn rth_pass_defines_k() {
        let cfg = EstimatorConfig::new(2, 1000, 0);
        let est = run_pass_until(&Scripted(vec![7, 39]), &fixed("a", 0.0), "m", &cfg, &mut NullSink).unwrap();
        assert_eq!(est.k_used, 40);
        assert_eq!(est.pu, 0.05);
        for workers in [2, 3, 16, 64] {
            let est2 = run_pass_until(
                &Scripted(vec![7, 39]),
                &fixed("a", 0.0),
                "m",
                &cfg.with_parallel(workers),
                &mut NullSink,
            )
            .unwrap();
            assert_eq!(est, est2);
        }
    }

    #[test]
    fn censoring_at_cap() {
        let cfg = EstimatorConfig::new(2, 100, 0);
        let est = run_pass_until(&Scripted(vec![50]), &fixed("a", 0.0), "m", &cfg, &mut NullSink).unwrap();
        assert!(est.censored);
        assert_eq!((est.r_observed, est.k_used), (1, 100));
        assert_eq!(est.pu, 0.01);
        est.check_invariants().unwrap();
        let none = run_pass_until(&Scripted(vec![]), &fixed("a", 0.0), "m", &cfg, &mut NullSink).unwrap();
        assert_eq!((none.pu, none.censored), (0.0, true));
    }

    #[test]
    fn invalid_config_rejected_before_any_trial() {
        struct Counting(AtomicU64);
        impl TaskOracle for Counting {
            fn trial(&self, _: &TaskInstance, _: u64, _: u64) -> Result<TrialOutcome, TrialError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Ok(TrialOutcome::new(true, "", 0))
            }
            fn describe(&self) -> String {
                String::new()
            }
        }
        let o = Counting(AtomicU64::new(0));
        for cfg in [EstimatorConfig::new(0, 10, 0), EstimatorConfig::new(5, 4, 0)] {
            assert!(matches!(
                run_pass_until(&o, &fixed("a", 1.0), "m", &cfg, &mut NullSink),
                Err(Error::InvalidConfig(_))
            ));
        }
        let mut excluded = fixed("a", 1.0);
        excluded.excluded = true;
        assert!(run_pass_until(&o, &excluded, "m", &EstimatorConfig::default(), &mut NullSink).is_err());
        assert_eq!(o.0.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn persistent_errors_abort_as_incomplete() {
        struct FailsAt(u64, AtomicU64);
        impl TaskOracle for FailsAt {
            fn trial(&self, _: &TaskInstance, i: u64, _: u64) -> Result<TrialOutcome, TrialError> {
                if i == self.0 {
                    self.1.fetch_add(1, Ordering::SeqCst);
                    Err(TrialError::new("transport", "down"))
                } else {
                    Ok(TrialOutcome::new(false, "", 0))
                }
            }
            fn describe(&self) -> String {
                String::new()
            }
        }
        let o = FailsAt(5, AtomicU64::new(0));
        let mut sink = MemorySink::default();
        let err = run_pass_until(&o, &fixed("a", 0.0), "m", &EstimatorConfig::default(), &mut sink).unwrap_err();
        assert!(matches!(err, Error::Incomplete { trial_index: 5, .. }));
        // three attempts at index 5, all logged as errors
        assert_eq!(o.1.load(Ordering::SeqCst), 3);
        assert_eq!(sink.trials.iter().filter(|t| t.2.is_none()).count(), 3);
        assert_eq!(sink.trials.iter().filter(|t| t.2.is_some()).count(), 5);
    }

    #[test]
    fn transient_errors_do_not_consume_indices() {
        struct Flaky(AtomicU64);
        impl TaskOracle for Flaky {
            fn trial(&self, _: &TaskInstance, i: u64, _: u64) -> Result<TrialOutcome, TrialError> {
                if i == 3 && self.0.fetch_add(1, Ordering::SeqCst) == 0 {
                    return Err(TrialError::new("transport", "blip"));
                }
                Ok(TrialOutcome::new(i == 3, "", 0))
            }
            fn describe(&self) -> String {
                String::new()
            }
        }
        let est = run_pass_until(&Flaky(AtomicU64::new(0)), &fixed("a", 0.0), "m", &EstimatorConfig::default(), &mut NullSink)
            .unwrap();
        assert_eq!(est.k_used, 4);
    }

    #[test]
    fn resume_and_replay_match_uninterrupted() {
        let inst = fixed("x", 0.01);
        let cfg = EstimatorConfig::new(2, 100_000, 9);
        let mut full = MemorySink::default();
        let reference = run_pass_until(&oracle(), &inst, "m", &cfg, &mut full).unwrap();
        let all: BTreeMap<u64, bool> = full.trials.iter().map(|t| (t.1, t.2.unwrap())).collect();

        let cut = reference.k_used / 2;
        let partial: BTreeMap<u64, bool> = all.range(..cut).map(|(&k, &v)| (k, v)).collect();
        let mut rest = MemorySink::default();
        let resumed = resume_pass_until(&oracle(), &inst, "m", &cfg, &partial, &mut rest).unwrap();
        assert_eq!(resumed, reference);
        assert_eq!(rest.trials.len() as u64, reference.k_used - cut);

        let replayed = replay_pass_until("x", "m", &cfg, &all, &reference.trial_log_ref).unwrap().unwrap();
        assert_eq!(replayed, reference);
        assert_eq!(replay_pass_until("x", "m", &cfg, &partial, "").unwrap(), None);
    }

    #[test]
    fn overshoot_is_logged_but_ignored() {
        let cfg = EstimatorConfig::new(1, 1000, 0).with_parallel(8);
        let mut sink = MemorySink::default();
        let est = run_pass_until(&Scripted(vec![2]), &fixed("a", 0.0), "m", &cfg, &mut sink).unwrap();
        assert_eq!(est.k_used, 3);
        assert_eq!(sink.trials.len(), 8);
    }

    #[test]
    fn raising_the_cap_never_changes_uncensored_results() {
        let inst = fixed("b", 0.002);
        let small = run_pass_until(&oracle(), &inst, "m", &EstimatorConfig::new(1, 200, 5), &mut NullSink).unwrap();
        let big = run_pass_until(&oracle(), &inst, "m", &EstimatorConfig::new(1, 100_000, 5), &mut NullSink).unwrap();
        assert!(!big.censored);
        if !small.censored {
            assert_eq!(small.k_used, big.k_used);
        } else {
            assert!(big.r_observed >= small.r_observed);
        }
    }

    #[test]
    fn fixed_budget() {
        let o = oracle();
        let cfg = EstimatorConfig::default();
        let r = run_fixed_budget(&o, &fixed("a", 1.0), 1, &cfg, &mut NullSink).unwrap();
        assert_eq!(r, FixedBudgetRecord { passes: 1, trials: 1, passed_any: true });
        let r = run_fixed_budget(&o, &fixed("a", 0.0), 100, &cfg, &mut NullSink).unwrap();
        assert_eq!(r, FixedBudgetRecord { passes: 0, trials: 100, passed_any: false });
        assert!(run_fixed_budget(&o, &fixed("a", 0.0), 0, &cfg, &mut NullSink).is_err());
    }

    #[test]
    fn fixed_budget_mean_pass_count() {
        // analytic mean k * p = 10
        let o = oracle();
        let total: u64 = (0..200)
            .map(|s| {
                let cfg = EstimatorConfig { base_seed: s, ..Default::default() };
                run_fixed_budget(&o, &fixed("a", 0.001), 10_000, &cfg, &mut NullSink).unwrap().passes
            })
            .sum();
        let mean = total as f64 / 200.0;
        // SE of the mean is sqrt(10 / 200) ~ 0.22
        assert!((mean - 10.0).abs() < 1.0, "mean pass count {mean}");
    }
}
