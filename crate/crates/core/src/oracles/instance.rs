use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticLaw;
use crate::error::{Error, Result};

/// How a generation is judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifierKind {
    ExactSubstring,
    ExternalCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierSpec {
    pub kind: VerifierKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<String>,
    /// Shell command; `{output}` is replaced by the path of a file holding
    /// the generation, which is also fed on stdin. Exit status 0 passes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command_template: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    10_000
}

impl VerifierSpec {
    pub fn substring<I, S>(targets: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        VerifierSpec {
            kind: VerifierKind::ExactSubstring,
            targets: targets.into_iter().map(Into::into).collect(),
            command_template: None,
            timeout_ms: default_timeout_ms(),
        }
    }

    pub fn command(template: impl Into<String>, timeout: Duration) -> Self {
        VerifierSpec {
            kind: VerifierKind::ExternalCommand,
            targets: Vec::new(),
            command_template: Some(template.into()),
            timeout_ms: timeout.as_millis() as u64,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            VerifierKind::ExactSubstring => {
                if self.targets.is_empty() || self.targets.iter().any(|t| t.is_empty()) {
                    return Err(Error::InvalidConfig(
                        "exact-substring verifier needs at least one nonempty target".into(),
                    ));
                }
            }
            VerifierKind::ExternalCommand => {
                if self.command_template.as_deref().map_or(true, |c| c.trim().is_empty()) {
                    return Err(Error::InvalidConfig(
                        "external-command verifier needs a nonempty command template".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Ground-truth pass probability attached to an instance for simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticModel {
    /// Size-independent probability.
    Fixed { p: f64 },
    Law(SyntheticLaw),
    /// Every step must pass: product of step probabilities.
    Steps { laws: Vec<SyntheticLaw> },
    /// Any circuit may pass: maximum of circuit probabilities.
    Circuits { laws: Vec<SyntheticLaw> },
}

impl SyntheticModel {
    /// Pass probability at non-embedding parameter count `n`.
    pub fn probability(&self, n: f64) -> Result<f64> {
        use super::synthetic::*;
        match self {
            SyntheticModel::Fixed { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::domain(format!("fixed probability {p} outside [0,1]")));
                }
                Ok(*p)
            }
            SyntheticModel::Law(law) => scaling_family_probability(law, n),
            SyntheticModel::Steps { laws } => multi_step_probability(laws, n),
            SyntheticModel::Circuits { laws } => multi_circuit_probability(laws, n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SyntheticModel::Fixed { p } if !(0.0..=1.0).contains(p) => {
                Err(Error::domain(format!("fixed probability {p} outside [0,1]")))
            }
            SyntheticModel::Fixed { .. } => Ok(()),
            SyntheticModel::Law(law) => law.validate(),
            SyntheticModel::Steps { laws } | SyntheticModel::Circuits { laws } => {
                if laws.is_empty() {
                    return Err(Error::domain("synthetic model needs at least one law"));
                }
                laws.iter().try_for_each(SyntheticLaw::validate)
            }
        }
    }
}

/// The unit of evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub instance_id: String,
    #[serde(default)]
    pub prompt: String,
    pub verifier: VerifierSpec,
    /// Designated answer string, used when filtering distracting instances.
    /// Falls back to the first substring target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default)]
    pub excluded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_reason: Option<String>,
    /// Summed negative log-likelihood of the reference answer, per model.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ground_truth_loss: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticModel>,
    /// Fields this version does not interpret, kept for round trips.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl TaskInstance {
    pub fn new(instance_id: impl Into<String>, prompt: impl Into<String>, verifier: VerifierSpec) -> Self {
        TaskInstance {
            instance_id: instance_id.into(),
            prompt: prompt.into(),
            verifier,
            answer: None,
            excluded: false,
            exclusion_reason: None,
            ground_truth_loss: BTreeMap::new(),
            synthetic: None,
            extra: serde_json::Map::new(),
        }
    }

    /// A synthetic-only instance whose verifier is never consulted.
    pub fn synthetic(instance_id: impl Into<String>, model: SyntheticModel) -> Self {
        let mut inst = TaskInstance::new(instance_id, "", VerifierSpec::substring(["PASS"]));
        inst.synthetic = Some(model);
        inst
    }

    pub fn designated_answer(&self) -> Option<&str> {
        self.answer
            .as_deref()
            .or_else(|| self.verifier.targets.first().map(String::as_str))
    }

    pub fn validate(&self) -> Result<()> {
        if self.instance_id.is_empty() {
            return Err(Error::InvalidConfig("empty instance_id".into()));
        }
        self.verifier.validate()?;
        if let Some((model, loss)) = self
            .ground_truth_loss
            .iter()
            .find(|(_, l)| !(l.is_finite() && **l >= 0.0))
        {
            return Err(Error::domain(format!(
                "instance {}: loss {loss} for model {model} must be finite and nonnegative",
                self.instance_id
            )));
        }
        if let Some(model) = &self.synthetic {
            model.validate()?;
        }
        Ok(())
    }
}
