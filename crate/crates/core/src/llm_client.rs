//! Completion interface to an external LLM service, and deterministic mocks.
//!
//! Wire format (field names configurable through [`WireFormat`]):
//!
//! ```text
//! POST <base_url>  {"prompt": "...", "max_tokens": 256, "temperature": 0.0}
//! 200              {"text": "..."}
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::catalog::UserId;
use crate::instructgen::candidate_section;
use crate::text;

pub const ENV_ENDPOINT: &str = "PALR_LLM_ENDPOINT";
pub const ENV_AUTH_HEADER: &str = "PALR_LLM_AUTH_HEADER";
pub const ENV_AUTH_VALUE: &str = "PALR_LLM_AUTH_VALUE";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { max_tokens: 512, temperature: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub params: GenerationParams,
    /// Which user the prompt is about; used for error reports and by the
    /// scripted mock.
    pub user: Option<UserId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub latency_ms: u64,
}

fn who(user: &Option<UserId>) -> String {
    user.as_ref().map_or_else(|| "-".to_owned(), |u| u.to_string())
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("user {}: request timed out after {attempts} attempt(s)", who(.user))]
    Timeout { user: Option<UserId>, attempts: u32 },
    #[error("user {}: service returned HTTP {status}: {body}", who(.user))]
    Service { user: Option<UserId>, status: u16, body: String },
    #[error("user {}: malformed response: {reason}", who(.user))]
    MalformedResponse { user: Option<UserId>, reason: String },
    #[error("user {}: transport error after {attempts} attempt(s): {message}", who(.user))]
    Transport { user: Option<UserId>, attempts: u32, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid endpoint config: {0}")]
    Config(String),
}

impl LlmError {
    /// Worth another attempt: timeouts, 5xx / 429, connection trouble.
    pub fn is_transient(&self) -> bool {
        match self {
            Self::Timeout { .. } | Self::Transport { .. } => true,
            Self::Service { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

pub trait CompletionClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
}

impl<C: CompletionClient + ?Sized> CompletionClient for Box<C> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<C: CompletionClient + ?Sized> CompletionClient for &C {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(request)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WireFormat {
    pub prompt_field: String,
    pub max_tokens_field: String,
    pub temperature_field: String,
    /// Field of the response holding the completion text.
    pub text_field: String,
}

impl Default for WireFormat {
    fn default() -> Self {
        Self {
            prompt_field: "prompt".into(),
            max_tokens_field: "max_tokens".into(),
            temperature_field: "temperature".into(),
            text_field: "text".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_concurrency: usize,
    pub params: GenerationParams,
    pub wire: WireFormat,
    /// First retry waits this long; each later retry doubles it.
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    #[serde(skip)]
    pub auth: Option<(String, String)>,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080/complete".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            max_concurrency: 4,
            params: GenerationParams::default(),
            wire: WireFormat::default(),
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
            auth: None,
        }
    }
}

impl LlmEndpointConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.timeout_secs > 0.0) || !self.timeout_secs.is_finite() {
            return Err(LlmError::Config("timeout must be > 0".into()));
        }
        if self.max_concurrency == 0 {
            return Err(LlmError::Config("max_concurrency must be >= 1".into()));
        }
        if self.base_url.trim().is_empty() {
            return Err(LlmError::Config("base_url is empty".into()));
        }
        Ok(())
    }

    /// Applies the endpoint and credential environment variables, if set.
    pub fn with_env(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_ENDPOINT) {
            if !url.trim().is_empty() {
                self.base_url = url;
            }
        }
        if let (Ok(name), Ok(value)) = (std::env::var(ENV_AUTH_HEADER), std::env::var(ENV_AUTH_VALUE)) {
            self.auth = Some((name, value));
        }
        self
    }

    fn backoff(&self, retry: u32) -> Duration {
        let ms = self.backoff_base_ms.saturating_mul(1u64 << retry.min(20));
        Duration::from_millis(ms.min(self.backoff_max_ms))
    }
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Blocking HTTP client; share one instance across worker threads.
pub struct HttpClient {
    cfg: LlmEndpointConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl HttpClient {
    pub fn new(cfg: LlmEndpointConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate::new(cfg.max_concurrency);
        Ok(Self { cfg, agent, gate })
    }

    pub fn config(&self) -> &LlmEndpointConfig {
        &self.cfg
    }

    fn body(&self, req: &CompletionRequest) -> Value {
        let w = &self.cfg.wire;
        let mut body = serde_json::Map::new();
        body.insert(w.prompt_field.clone(), json!(req.prompt));
        body.insert(w.max_tokens_field.clone(), json!(req.params.max_tokens));
        body.insert(w.temperature_field.clone(), json!(req.params.temperature));
        Value::Object(body)
    }

    fn attempt(&self, req: &CompletionRequest, body: &Value, attempts: u32) -> Result<String, LlmError> {
        let _permit = self.gate.acquire();
        let mut call = self.agent.post(&self.cfg.base_url);
        if let Some((name, value)) = &self.cfg.auth {
            call = call.header(name.as_str(), value.as_str());
        }
        let user = req.user.clone();
        let mut resp = call.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => LlmError::Timeout { user: user.clone(), attempts },
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => {
                LlmError::Timeout { user: user.clone(), attempts }
            }
            other => LlmError::Transport { user: user.clone(), attempts, message: other.to_string() },
        })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => LlmError::Timeout { user: user.clone(), attempts },
            other => LlmError::Transport { user: user.clone(), attempts, message: other.to_string() },
        })?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Service { user, status, body: truncate(&text, 200) });
        }
        let parsed: Value = serde_json::from_str(&text).map_err(|e| LlmError::MalformedResponse {
            user: user.clone(),
            reason: format!("body is not JSON: {e}"),
        })?;
        match parsed.get(&self.cfg.wire.text_field) {
            Some(Value::String(s)) => Ok(s.clone()),
            _ => Err(LlmError::MalformedResponse {
                user,
                reason: format!("missing string field `{}`", self.cfg.wire.text_field),
            }),
        }
    }
}

fn truncate(s: &str, n: usize) -> String {
    match s.char_indices().nth(n) {
        Some((p, _)) => format!("{}...", &s[..p]),
        None => s.to_owned(),
    }
}

impl CompletionClient for HttpClient {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        if req.prompt.trim().is_empty() {
            return Err(LlmError::InvalidRequest("prompt is empty".into()));
        }
        let body = self.body(req);
        let start = Instant::now();
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(req, &body, attempt) {
                Ok(text) => {
                    return Ok(CompletionResponse { text, latency_ms: start.elapsed().as_millis() as u64 })
                }
                Err(e) if e.is_transient() && attempt <= self.cfg.max_retries => {
                    let wait = self.cfg.backoff(attempt - 1);
                    log::debug!("{e}; retrying in {wait:?}");
                    std::thread::sleep(wait);
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Echoes the first `n` candidates of a ranking prompt, in prompt order.
#[derive(Clone, Debug)]
pub struct EchoCandidates {
    pub n: usize,
    pub quote: char,
}

impl Default for EchoCandidates {
    fn default() -> Self {
        Self { n: 10, quote: '"' }
    }
}

impl CompletionClient for EchoCandidates {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let malformed = |reason: &str| LlmError::MalformedResponse {
            user: req.user.clone(),
            reason: reason.to_owned(),
        };
        let section = candidate_section(&req.prompt, self.quote)
            .ok_or_else(|| malformed("prompt has no candidate section"))?;
        let cands = text::parse_quoted(section, self.quote);
        if cands.is_empty() {
            return Err(malformed("candidate section lists no items"));
        }
        let echoed: Vec<String> =
            cands.iter().take(self.n).map(|c| text::quote(c, self.quote)).collect();
        Ok(CompletionResponse { text: echoed.join(", "), latency_ms: 0 })
    }
}

/// Returns a fixed completion per user.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scripted {
    pub script: BTreeMap<String, String>,
}

impl Scripted {
    pub fn new(script: BTreeMap<String, String>) -> Self {
        Self { script }
    }
}

impl CompletionClient for Scripted {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let key = req.user.as_ref().map(UserId::as_str).unwrap_or("");
        match self.script.get(key) {
            Some(text) => Ok(CompletionResponse { text: text.clone(), latency_ms: 0 }),
            None => Err(LlmError::MalformedResponse {
                user: req.user.clone(),
                reason: format!("no scripted completion for `{key}`"),
            }),
        }
    }
}

#[derive(Serialize)]
struct TranscriptEntry<'a> {
    user: Option<&'a UserId>,
    prompt: &'a str,
    params: &'a GenerationParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    latency_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Wraps a client and appends every exchange to a JSON-lines transcript.
pub struct Transcribed<C, W: Write + Send> {
    inner: C,
    sink: Mutex<W>,
}

impl<C, W: Write + Send> Transcribed<C, W> {
    pub fn new(inner: C, sink: W) -> Self {
        Self { inner, sink: Mutex::new(sink) }
    }

    pub fn into_parts(self) -> (C, W) {
        (self.inner, self.sink.into_inner().unwrap_or_else(|e| e.into_inner()))
    }
}

impl<C: CompletionClient, W: Write + Send> CompletionClient for Transcribed<C, W> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let result = self.inner.complete(req);
        let entry = TranscriptEntry {
            user: req.user.as_ref(),
            prompt: &req.prompt,
            params: &req.params,
            text: result.as_ref().ok().map(|r| r.text.as_str()),
            latency_ms: result.as_ref().ok().map(|r| r.latency_ms),
            error: result.as_ref().err().map(ToString::to_string),
        };
        let mut sink = self.sink.lock().unwrap_or_else(|e| e.into_inner());
        let written = serde_json::to_writer(&mut *sink, &entry)
            .map_err(std::io::Error::from)
            .and_then(|_| sink.write_all(b"\n"));
        if let Err(e) = written {
            log::warn!("failed to write transcript entry: {e}");
        }
        result
    }
}
