use std::io::Write;
use std::process::{Command, Stdio};

use wait_timeout::ChildExt;

use super::{VerifierKind, VerifierSpec};
use crate::error::TrialError;

/// Judges one generation.
///
/// Substring matching is case-sensitive and byte exact. Command verifiers
/// pass on exit status 0; a timeout or spawn failure is a trial error, not
/// a fail.
pub fn verify(spec: &VerifierSpec, output: &str) -> Result<bool, TrialError> {
    spec.validate()
        .map_err(|e| TrialError::new("verifier-config", e.to_string()))?;
    match spec.kind {
        VerifierKind::ExactSubstring => Ok(spec.targets.iter().any(|t| output.contains(t.as_str()))),
        VerifierKind::ExternalCommand => run_command(spec, output),
    }
}

fn run_command(spec: &VerifierSpec, output: &str) -> Result<bool, TrialError> {
    let io_err = |e: std::io::Error| TrialError::new("verifier-io", e.to_string());
    let mut file = tempfile::NamedTempFile::new().map_err(io_err)?;
    file.write_all(output.as_bytes()).map_err(io_err)?;
    file.flush().map_err(io_err)?;

    let template = spec.command_template.as_deref().unwrap_or_default();
    let command = template.replace("{output}", &shell_quote(&file.path().to_string_lossy()));

    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| TrialError::new("verifier-spawn", e.to_string()))?;

    if let Some(mut stdin) = child.stdin.take() {
        // the command may exit without reading; a broken pipe is fine
        let _ = stdin.write_all(output.as_bytes());
    }

    match child.wait_timeout(spec.timeout()).map_err(io_err)? {
        Some(status) => Ok(status.success()),
        None => {
            let _ = child.kill();
            let _ = child.wait();
            Err(TrialError::new(
                "verifier-timeout",
                format!("command exceeded {} ms", spec.timeout_ms),
            ))
        }
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}
