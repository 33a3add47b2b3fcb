//! Provider-agnostic chat completion with retries, a write-ahead call
//! log hook, and deterministic backends for tests and replay.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_output_units: u32,
    /// Distinguishes repeated samples of the same prompt.
    pub sample_index: usize,
}

impl ChatRequest {
    fn validate(&self) -> Result<(), GatewayError> {
        if self.model_id.is_empty() {
            return Err(GatewayError::InvalidRequest("empty model_id".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FinishReason {
    #[default]
    Complete,
    LengthTruncated,
    Refused,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage_units: u64,
    pub latency_ms: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend unavailable after {attempts} attempt(s): {last}")]
    TransientFailure { attempts: u32, last: String },
    #[error("no recorded response for request {key}")]
    ReplayMiss { key: String },
    #[error("scripted mock has no response for prompt {prompt_sha256} sample {sample_index}")]
    MockMiss { prompt_sha256: String, sample_index: usize },
    #[error("backend rejected request: {0}")]
    Fatal(String),
    #[error("cannot record model call: {0}")]
    Store(String),
}

/// Failure modes a backend reports to the retry loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    Transient(String),
    RateLimited { retry_after: Option<Duration> },
    Permanent(GatewayError),
}

impl From<GatewayError> for BackendError {
    fn from(e: GatewayError) -> Self {
        BackendError::Permanent(e)
    }
}

pub trait ChatBackend: Send + Sync {
    fn call(&self, request: &ChatRequest) -> Result<Completion, BackendError>;
}

/// Stable digest of the request identity. Prompt bytes are hashed as is.
pub fn cache_key(request: &ChatRequest) -> String {
    let mut h = Sha256::new();
    for field in [request.model_id.as_bytes(), request.prompt.as_bytes()] {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field);
    }
    h.update(request.temperature.to_bits().to_le_bytes());
    h.update((request.sample_index as u64).to_le_bytes());
    hex::encode(h.finalize())
}

pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMatcher {
    /// Hex SHA-256 of the exact prompt bytes.
    PromptSha256(String),
    /// Prompt contains this substring.
    Contains(String),
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub matcher: PromptMatcher,
    /// `None` matches every sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<usize>,
    pub text: String,
    #[serde(default)]
    pub finish_reason: FinishReason,
}

impl MockRule {
    pub fn exact(prompt: &str, sample_index: Option<usize>, text: impl Into<String>) -> Self {
        MockRule {
            matcher: PromptMatcher::PromptSha256(prompt_digest(prompt)),
            sample_index,
            text: text.into(),
            finish_reason: FinishReason::Complete,
        }
    }

    pub fn contains(needle: impl Into<String>, sample_index: Option<usize>, text: impl Into<String>) -> Self {
        MockRule {
            matcher: PromptMatcher::Contains(needle.into()),
            sample_index,
            text: text.into(),
            finish_reason: FinishReason::Complete,
        }
    }
}

/// Fixture-table backend. Rules are tried in order; the first whose
/// matcher and sample index fit wins. At temperature 0 every request is
/// looked up as sample 0 so repeated samples agree.
#[derive(Debug, Clone, Default)]
pub struct ScriptedMock {
    rules: Vec<MockRule>,
    latency: Duration,
}

impl ScriptedMock {
    pub fn new(rules: Vec<MockRule>) -> Self {
        ScriptedMock { rules, latency: Duration::ZERO }
    }

    /// Artificial per-call delay, for exercising concurrency and crashes.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    /// Reads a fixture file with one JSON [`MockRule`] per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| GatewayError::Fatal(format!("cannot read mock fixtures: {e}")))?;
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rule = serde_json::from_str(line)
                .map_err(|e| GatewayError::Fatal(format!("mock fixture line {}: {e}", i + 1)))?;
            rules.push(rule);
        }
        Ok(ScriptedMock::new(rules))
    }

    pub fn rules(&self) -> &[MockRule] {
        &self.rules
    }
}

impl ChatBackend for ScriptedMock {
    fn call(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let sample = if request.temperature == 0.0 { 0 } else { request.sample_index };
        let digest = prompt_digest(&request.prompt);
        let rule = self.rules.iter().find(|r| {
            let prompt_ok = match &r.matcher {
                PromptMatcher::PromptSha256(h) => h.eq_ignore_ascii_case(&digest),
                PromptMatcher::Contains(n) => request.prompt.contains(n.as_str()),
                PromptMatcher::Any => true,
            };
            prompt_ok && r.sample_index.is_none_or(|s| s == sample)
        });
        match rule {
            Some(r) => Ok(Completion {
                text: r.text.clone(),
                finish_reason: r.finish_reason,
                usage_units: r.text.chars().count().div_ceil(4) as u64,
                latency_ms: 0,
            }),
            None => Err(GatewayError::MockMiss { prompt_sha256: digest, sample_index: sample }.into()),
        }
    }
}

/// Serves completions recorded in a prior run; any unseen request fails.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    table: HashMap<String, Completion>,
}

impl ReplayBackend {
    pub fn new(entries: impl IntoIterator<Item = (String, Completion)>) -> Self {
        ReplayBackend { table: entries.into_iter().collect() }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn call(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let key = cache_key(request);
        self.table
            .get(&key)
            .cloned()
            .ok_or_else(|| GatewayError::ReplayMiss { key }.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    "EXPLAINBENCH_API_KEY".into()
}

fn default_timeout_secs() -> u64 {
    120
}

/// OpenAI-style chat-completions client.
pub struct RemoteHttp {
    config: RemoteConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteHttp {
    pub fn new(config: RemoteConfig) -> Result<Self, GatewayError> {
        let api_key = std::env::var(&config.api_key_env).ok();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Fatal(e.to_string()))?;
        Ok(RemoteHttp { config, api_key, client })
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    completion_tokens: u64,
}

impl ChatBackend for RemoteHttp {
    fn call(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let body = serde_json::json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_units,
        });
        let started = Instant::now();
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 {
            let retry_after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .map(Duration::from_secs_f64);
            return Err(BackendError::RateLimited { retry_after });
        }
        if status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(GatewayError::Fatal(format!("HTTP {status}: {text}")).into());
        }
        let wire: WireResponse = resp
            .json()
            .map_err(|e| BackendError::Permanent(GatewayError::Fatal(format!("bad response body: {e}"))))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Permanent(GatewayError::Fatal("response has no choices".into())))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::LengthTruncated,
            Some("content_filter") => FinishReason::Refused,
            _ => FinishReason::Complete,
        };
        Ok(Completion {
            text: choice.message.content.unwrap_or_default(),
            finish_reason,
            usage_units: wire.usage.map_or(0, |u| u.completion_tokens),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 5, initial_delay_ms: 1000, max_delay_ms: 60_000 }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let ms = self.initial_delay_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

/// Receives every fresh completion before the gateway returns it.
pub trait CallRecorder: Send + Sync {
    fn record_call(&self, key: &str, request: &ChatRequest, completion: &Completion) -> Result<(), String>;
}

struct Limiter {
    in_flight: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub const DEFAULT_IN_FLIGHT: usize = 4;

/// Front door for model calls. Completions already recorded (for example
/// by an interrupted run) are served from the cache without a backend call.
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    recorder: Option<Arc<dyn CallRecorder>>,
    cache: RwLock<HashMap<String, Completion>>,
    limiter: Limiter,
    retry: RetryPolicy,
    backend_calls: Mutex<u64>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Gateway {
            backend,
            recorder: None,
            cache: RwLock::new(HashMap::new()),
            limiter: Limiter { in_flight: Mutex::new(0), freed: Condvar::new(), max: DEFAULT_IN_FLIGHT },
            retry: RetryPolicy::default(),
            backend_calls: Mutex::new(0),
        }
    }

    pub fn with_recorder(mut self, recorder: Arc<dyn CallRecorder>) -> Self {
        self.recorder = Some(recorder);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_in_flight(mut self, max: usize) -> Self {
        self.limiter.max = max.max(1);
        self
    }

    pub fn with_cached(self, entries: impl IntoIterator<Item = (String, Completion)>) -> Self {
        self.cache.write().unwrap().extend(entries);
        self
    }

    /// Number of requests that reached the backend.
    pub fn backend_calls(&self) -> u64 {
        *self.backend_calls.lock().unwrap()
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        request.validate()?;
        let key = cache_key(request);
        if let Some(hit) = self.cache.read().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let completion = {
            let _permit = self.limiter.acquire();
            self.call_with_retry(request)?
        };
        let mut cache = self.cache.write().unwrap();
        if let Some(existing) = cache.get(&key) {
            return Ok(existing.clone());
        }
        if let Some(rec) = &self.recorder {
            rec.record_call(&key, request, &completion).map_err(GatewayError::Store)?;
        }
        cache.insert(key, completion.clone());
        Ok(completion)
    }

    fn call_with_retry(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let mut last = String::new();
        let attempts = self.retry.attempts.max(1);
        for attempt in 0..attempts {
            *self.backend_calls.lock().unwrap() += 1;
            match self.backend.call(request) {
                Ok(c) => return Ok(c),
                Err(BackendError::Permanent(e)) => return Err(e),
                Err(BackendError::Transient(msg)) => {
                    tracing::warn!(attempt, %msg, "transient backend failure");
                    last = msg;
                    if attempt + 1 < attempts {
                        std::thread::sleep(self.retry.delay(attempt));
                    }
                }
                Err(BackendError::RateLimited { retry_after }) => {
                    last = "rate limited".into();
                    if attempt + 1 < attempts {
                        std::thread::sleep(retry_after.unwrap_or_else(|| self.retry.delay(attempt)));
                    }
                }
            }
        }
        Err(GatewayError::TransientFailure { attempts, last })
    }
}
