use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Not enough usable observations for a fit.
    #[error("insufficient data: need at least {needed} usable points, got {got} ({context})")]
    InsufficientData {
        needed: usize,
        got: usize,
        context: String,
    },

    /// A fit produced parameters outside the model's valid region.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// A trial could not be completed after the configured retries. The
    /// instance is left incomplete and may be resumed.
    #[error("instance {instance_id} incomplete at trial {trial_index}: {source}")]
    Incomplete {
        instance_id: String,
        trial_index: u64,
        #[source]
        source: TrialError,
    },

    #[error("duplicate trial record for instance {instance_id} at index {trial_index}")]
    DuplicateTrial { instance_id: String, trial_index: u64 },

    /// Input file does not match its schema.
    #[error("{}schema error at `{field}`{}: {message}", path_prefix(.path), line_suffix(.line))]
    Schema {
        path: Option<PathBuf>,
        field: String,
        line: Option<usize>,
        message: String,
    },

    #[error("corrupted log {path} at line {line}: {message}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("digest mismatch for {what}: manifest has {expected}, found {actual}")]
    DigestMismatch {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn path_prefix(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default()
}

fn line_suffix(l: &Option<usize>) -> String {
    l.map(|l| format!(" (line {l})")).unwrap_or_default()
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn insufficient(needed: usize, got: usize, context: impl Into<String>) -> Self {
        Error::InsufficientData {
            needed,
            got,
            context: context.into(),
        }
    }

    /// True for errors caused by the inputs rather than the environment.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::InvalidConfig(_)
                | Error::InsufficientData { .. }
                | Error::DegenerateFit(_)
                | Error::DuplicateTrial { .. }
                | Error::Schema { .. }
                | Error::CorruptLog { .. }
                | Error::DigestMismatch { .. }
                | Error::Json(_)
        )
    }
}

/// A trial that produced neither a pass nor a fail verdict.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code}: {message}")]
pub struct TrialError {
    /// Short machine-readable code, stored in the trial log.
    pub code: String,
    pub message: String,
}

impl TrialError {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        TrialError {
            code: code.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
