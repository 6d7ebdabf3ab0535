//! Adapter for live text-generation endpoints.
//!
//! Wire contract: `POST <url>` with JSON body
//! `{prompt, max_tokens, temperature, stop, seed?}` and a bearer token read
//! from an environment variable; the response carries `{text}`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{verify, TaskInstance, TaskOracle, TrialOutcome};
use crate::error::{Error, Result, TrialError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_ms.saturating_mul(1 << attempt.min(10)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    /// Environment variable holding the bearer token. No header is sent
    /// when unset or when the variable is missing.
    #[serde(default)]
    pub auth_env: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop: Vec<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_request_timeout_ms")]
    pub request_timeout_ms: u64,
    /// Forward the per-trial seed in the request body.
    #[serde(default = "default_true")]
    pub forward_seed: bool,
}

fn default_request_timeout_ms() -> u64 {
    120_000
}

fn default_true() -> bool {
    true
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            auth_env: Some("PU_API_TOKEN".into()),
            temperature: 1.0,
            max_tokens: 256,
            stop: Vec::new(),
            retry: RetryPolicy::default(),
            request_timeout_ms: default_request_timeout_ms(),
            forward_seed: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.url.trim().is_empty() {
            return Err(Error::InvalidConfig("endpoint url is empty".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive for random sampling, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidConfig("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn request(&self, prompt: &str, seed: u64) -> GenerationRequest {
        GenerationRequest {
            prompt: prompt.to_string(),
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            stop: self.stop.clone(),
            seed: self.forward_seed.then_some(seed),
        }
    }
}

/// Request body sent to the endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct GenerationResponse {
    text: String,
}

/// Something that turns a request into generated text.
pub trait GenerationBackend: Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, TrialError>;
}

pub struct HttpBackend {
    config: EndpointConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.request_timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let token = config.auth_env.as_deref().and_then(|v| std::env::var(v).ok());
        Ok(HttpBackend {
            config,
            agent,
            token,
        })
    }

    fn attempt(&self, request: &GenerationRequest) -> Result<String, (bool, TrialError)> {
        let mut req = self.agent.post(&self.config.url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(request)
            .map_err(|e| (true, TrialError::new("transport", e.to_string())))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err((true, TrialError::new("http-status", format!("status {status}"))));
        }
        if !(200..300).contains(&status) {
            return Err((false, TrialError::new("http-status", format!("status {status}"))));
        }
        let body: GenerationResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| (false, TrialError::new("bad-response", e.to_string())))?;
        Ok(body.text)
    }
}

impl GenerationBackend for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, TrialError> {
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err((retryable, err)) => {
                    if !retryable || attempt >= self.config.retry.max_retries {
                        return Err(err);
                    }
                    log::warn!("endpoint attempt {attempt} failed: {err}; retrying");
                    std::thread::sleep(self.config.retry.delay(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

/// One recorded request/response pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedGeneration {
    pub prompt: String,
    pub seed: Option<u64>,
    pub text: String,
}

/// Wraps a backend and keeps every successful generation for later replay.
pub struct RecordingBackend<B> {
    inner: B,
    records: Mutex<Vec<RecordedGeneration>>,
}

impl<B: GenerationBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            records: Mutex::new(Vec::new()),
        }
    }

    pub fn records(&self) -> Vec<RecordedGeneration> {
        self.records.lock().unwrap().clone()
    }

    /// Writes the session as JSON lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        for rec in self.records.lock().unwrap().iter() {
            writeln!(f, "{}", serde_json::to_string(rec)?).map_err(|e| Error::io(path, e))?;
        }
        f.sync_all().map_err(|e| Error::io(path, e))
    }
}

impl<B: GenerationBackend> GenerationBackend for RecordingBackend<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, TrialError> {
        let text = self.inner.generate(request)?;
        self.records.lock().unwrap().push(RecordedGeneration {
            prompt: request.prompt.clone(),
            seed: request.seed,
            text: text.clone(),
        });
        Ok(text)
    }
}

/// Answers from a recorded session, keyed by `(prompt, seed)`.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    table: HashMap<(String, Option<u64>), String>,
}

impl ReplayBackend {
    pub fn from_records(records: impl IntoIterator<Item = RecordedGeneration>) -> Self {
        ReplayBackend {
            table: records
                .into_iter()
                .map(|r| ((r.prompt, r.seed), r.text))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RecordedGeneration = serde_json::from_str(&line).map_err(|e| Error::Schema {
                path: Some(path.to_path_buf()),
                field: "recorded generation".into(),
                line: Some(i + 1),
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        Ok(Self::from_records(records))
    }
}

impl GenerationBackend for ReplayBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, TrialError> {
        self.table
            .get(&(request.prompt.clone(), request.seed))
            .cloned()
            .ok_or_else(|| TrialError::new("replay-miss", "no recorded generation for request"))
    }
}

/// Samples one generation per trial and judges it with the instance's
/// verifier. Concurrency is bounded by the caller's worker count.
pub struct EndpointOracle<B> {
    pub config: EndpointConfig,
    backend: B,
}

impl<B: GenerationBackend> EndpointOracle<B> {
    pub fn new(config: EndpointConfig, backend: B) -> Result<Self> {
        config.validate()?;
        Ok(EndpointOracle { config, backend })
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }
}

impl EndpointOracle<HttpBackend> {
    pub fn http(config: EndpointConfig) -> Result<Self> {
        let backend = HttpBackend::new(config.clone())?;
        Self::new(config, backend)
    }
}

impl<B: GenerationBackend> TaskOracle for EndpointOracle<B> {
    fn trial(
        &self,
        instance: &TaskInstance,
        _trial_index: u64,
        trial_seed: u64,
    ) -> Result<TrialOutcome, TrialError> {
        let started = Instant::now();
        let request = self.config.request(&instance.prompt, trial_seed);
        let text = self.backend.generate(&request)?;
        let passed = verify(&instance.verifier, &text)?;
        Ok(TrialOutcome::new(
            passed,
            &text,
            started.elapsed().as_millis() as u64,
        ))
    }

    fn describe(&self) -> String {
        let mut redacted = self.config.clone();
        redacted.auth_env = redacted.auth_env.map(|v| format!("env:{v}"));
        format!(
            "endpoint {}",
            serde_json::to_string(&redacted).unwrap_or_default()
        )
    }
}
