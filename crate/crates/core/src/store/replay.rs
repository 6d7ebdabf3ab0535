use std::collections::HashMap;
use std::path::Path;

use super::log::read_trial_log;
use crate::error::{Result, TrialError};
use crate::oracles::{sha256_hex, TaskInstance, TaskOracle, TrialOutcome};

/// Oracle answering from a recorded trial log instead of a model.
///
/// Trials are looked up by `(instance_id, trial_index)`; the trial seed is
/// ignored. A trial missing from the log is a `replay-miss` error.
#[derive(Debug, Clone)]
pub struct LogReplayOracle {
    verdicts: HashMap<(String, u64), TrialOutcome>,
    digest: String,
}

impl LogReplayOracle {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (records, _, _) = read_trial_log(path)?;
        let bytes = super::read_bytes(path)?;
        let mut verdicts = HashMap::with_capacity(records.len());
        for r in records {
            if let Some(passed) = r.passed() {
                verdicts.insert(
                    (r.instance_id, r.trial_index),
                    TrialOutcome {
                        passed,
                        output_hash: r.output_hash,
                        latency_ms: r.latency_ms,
                    },
                );
            }
        }
        Ok(LogReplayOracle {
            verdicts,
            digest: sha256_hex(&bytes),
        })
    }

    pub fn len(&self) -> usize {
        self.verdicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verdicts.is_empty()
    }
}

impl TaskOracle for LogReplayOracle {
    fn trial(
        &self,
        instance: &TaskInstance,
        trial_index: u64,
        _trial_seed: u64,
    ) -> Result<TrialOutcome, TrialError> {
        self.verdicts
            .get(&(instance.instance_id.clone(), trial_index))
            .cloned()
            .ok_or_else(|| {
                TrialError::new(
                    "replay-miss",
                    format!("no recorded verdict for {} at index {trial_index}", instance.instance_id),
                )
            })
    }

    fn describe(&self) -> String {
        format!("replay log sha256={}", self.digest)
    }
}
