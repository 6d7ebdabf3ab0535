//! Trial sources: anything that can answer pass or fail for one sampled
//! attempt at one task instance.

mod endpoint;
mod filter;
mod instance;
mod synthetic;
mod verify;

pub use endpoint::{
    EndpointConfig, EndpointOracle, GenerationBackend, GenerationRequest, HttpBackend,
    RecordedGeneration, RecordingBackend, ReplayBackend, RetryPolicy,
};
pub use filter::{filter_suite, ExclusionList};
pub use instance::{SyntheticModel, TaskInstance, VerifierKind, VerifierSpec};
pub use synthetic::{
    multi_circuit_probability, multi_step_probability, scaling_family_probability,
    mix64 as synthetic_mix, synthetic_trial, unit_interval, SyntheticLaw, SyntheticOracle,
};
pub use verify::verify;

use sha2::{Digest, Sha256};

use crate::error::TrialError;

/// Result of one decisive trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialOutcome {
    pub passed: bool,
    /// SHA-256 of the raw generation, hex encoded.
    pub output_hash: String,
    pub latency_ms: u64,
}

impl TrialOutcome {
    pub fn new(passed: bool, output: &str, latency_ms: u64) -> Self {
        TrialOutcome {
            passed,
            output_hash: sha256_hex(output.as_bytes()),
            latency_ms,
        }
    }
}

/// A pass/fail trial source.
///
/// Implementations must be safe to call from several threads at once and
/// should be a pure function of `(instance, trial_seed)` wherever the
/// backend allows it.
pub trait TaskOracle: Sync {
    fn trial(
        &self,
        instance: &TaskInstance,
        trial_index: u64,
        trial_seed: u64,
    ) -> Result<TrialOutcome, TrialError>;

    /// Stable textual description, hashed into the run manifest.
    fn describe(&self) -> String;
}

impl<O: TaskOracle + ?Sized> TaskOracle for &O {
    fn trial(
        &self,
        instance: &TaskInstance,
        trial_index: u64,
        trial_seed: u64,
    ) -> Result<TrialOutcome, TrialError> {
        (**self).trial(instance, trial_index, trial_seed)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
