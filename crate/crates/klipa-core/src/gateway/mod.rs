//! Access to chat-completion and embedding backends.
//!
//! [`Gateway`] is the only place in the crate that talks to a model. It
//! validates requests, retries transient failures with exponential backoff,
//! caps concurrent in-flight calls, L2-normalizes every embedding and keeps
//! call statistics. Backends ([`HttpBackend`], [`MockBackend`]) only perform
//! single attempts.

mod http;
mod mock;

use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use mock::{MockBackend, MockFixture, MockReply, MockRule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    BackendError { status: u16, body: String },
    #[error("context too long: {0}")]
    ContextTooLong(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        last: Box<GatewayError>,
    },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding is not finite or has zero norm")]
    DegenerateEmbedding,
    #[error("mock fixture exhausted after {0} scripted replies")]
    FixtureExhausted(usize),
    #[error("mock fixture parse error: {0}")]
    FixtureParse(String),
}

impl GatewayError {
    /// Transport-level failures and 5xx/429 responses are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Timeout | GatewayError::Transport(_) => true,
            GatewayError::BackendError { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }

    /// True when the backend could not be reached at all (after retries).
    pub fn is_unreachable(&self) -> bool {
        match self {
            GatewayError::RetriesExhausted { last, .. } => last.is_unreachable(),
            GatewayError::Timeout | GatewayError::Transport(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            temperature: 0.0,
            max_tokens: 1024,
            stop: None,
        }
    }

    pub fn prompt(text: impl Into<String>) -> Self {
        Self::new(vec![ChatMessage::user(text)])
    }

    pub fn with_stop(mut self, stop: Vec<String>) -> Self {
        self.stop = Some(stop);
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let first = self
            .messages
            .first()
            .ok_or_else(|| GatewayError::InvalidRequest("messages must not be empty".into()))?;
        if !matches!(first.role, Role::System | Role::User) {
            return Err(GatewayError::InvalidRequest(
                "first message must be a system or user message".into(),
            ));
        }
        if let Some(m) = self
            .messages
            .iter()
            .find(|m| matches!(m.role, Role::System | Role::User) && m.content.is_empty())
        {
            return Err(GatewayError::InvalidRequest(format!(
                "{:?} message content must not be empty",
                m.role
            )));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// All message contents joined by newlines.
    pub fn transcript(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A single backend attempt's output.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: f64,
    pub retries: u32,
}

/// A unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// L2-normalize raw backend output.
    pub fn normalized(raw: Vec<f64>) -> Result<Self, GatewayError> {
        if raw.is_empty() || raw.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::DegenerateEmbedding);
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(GatewayError::DegenerateEmbedding);
        }
        Ok(Self(raw.into_iter().map(|v| v / norm).collect()))
    }

    /// Wrap values without normalizing them, for vectors read back from an
    /// index file or built by hand in tests.
    pub fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// One attempt against a concrete backend. Retries, validation and
/// normalization are the gateway's job, not the backend's.
pub trait Backend: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<Completion, GatewayError>;
    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError>;
    fn chat_model(&self) -> &str;
    fn embed_model(&self) -> &str;
    /// The dimension the backend is expected to return, if known.
    fn embed_dim(&self) -> Option<usize>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub embed_base_url: Option<String>,
    #[serde(default = "default_embed_model")]
    pub embed_model: String,
    #[serde(default)]
    pub embed_dim: Option<usize>,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_base_url() -> String {
    "http://127.0.0.1:8000/v1".into()
}
fn default_model() -> String {
    "Qwen2.5-7B-Instruct".into()
}
fn default_embed_model() -> String {
    "intfloat/multilingual-e5-base".into()
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_parallelism() -> usize {
    8
}
fn default_backoff_ms() -> u64 {
    200
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            base_url: default_base_url(),
            model: default_model(),
            embed_base_url: None,
            embed_model: default_embed_model(),
            embed_dim: None,
            api_key: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            parallelism: default_parallelism(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

impl GatewayConfig {
    /// Apply `LLM_*`, `EMBED_*` and `GATEWAY_*` environment overrides.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: String) -> Result<T, String> {
            v.parse().map_err(|_| format!("{key}: not a valid number: {v:?}"))
        }
        if let Some(v) = get("LLM_BASE_URL") {
            self.base_url = v;
        }
        if let Some(v) = get("LLM_MODEL") {
            self.model = v;
        }
        if let Some(v) = get("EMBED_BASE_URL") {
            self.embed_base_url = Some(v);
        }
        if let Some(v) = get("EMBED_MODEL") {
            self.embed_model = v;
        }
        if let Some(v) = get("LLM_API_KEY") {
            self.api_key = Some(v);
        }
        if let Some(v) = get("GATEWAY_TIMEOUT_MS") {
            self.timeout_ms = num("GATEWAY_TIMEOUT_MS", v)?;
        }
        if let Some(v) = get("GATEWAY_MAX_RETRIES") {
            self.max_retries = num("GATEWAY_MAX_RETRIES", v)?;
        }
        if let Some(v) = get("GATEWAY_PARALLELISM") {
            self.parallelism = num("GATEWAY_PARALLELISM", v)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GatewayStats {
    pub chat_calls: u64,
    pub chat_attempts: u64,
    pub retries: u64,
    pub embed_calls: u64,
    pub chat_latencies_ms: Vec<f64>,
}

impl GatewayStats {
    pub fn mean_chat_latency_ms(&self) -> Option<f64> {
        if self.chat_latencies_ms.is_empty() {
            None
        } else {
            Some(self.chat_latencies_ms.iter().sum::<f64>() / self.chat_latencies_ms.len() as f64)
        }
    }
}

/// Counting semaphore capping in-flight backend calls.
struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    max_retries: u32,
    backoff: Duration,
    limiter: Limiter,
    stats: Mutex<GatewayStats>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("chat_model", &self.backend.chat_model())
            .field("embed_model", &self.backend.embed_model())
            .field("max_retries", &self.max_retries)
            .field("parallelism", &self.limiter.max)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, max_retries: u32, backoff: Duration, parallelism: usize) -> Self {
        Self {
            backend,
            max_retries,
            backoff,
            limiter: Limiter::new(parallelism),
            stats: Mutex::new(GatewayStats::default()),
        }
    }

    /// A live gateway speaking the chat-completions protocol.
    pub fn http(cfg: &GatewayConfig) -> Self {
        Self::new(
            Arc::new(HttpBackend::new(cfg)),
            cfg.max_retries,
            Duration::from_millis(cfg.backoff_ms),
            cfg.parallelism,
        )
    }

    /// An offline gateway replaying a fixture. Mock calls never fail
    /// transiently, so no retries are configured.
    pub fn mock(backend: Arc<MockBackend>) -> Self {
        Self::new(backend, 0, Duration::ZERO, 8)
    }

    pub fn chat_model(&self) -> &str {
        self.backend.chat_model()
    }

    pub fn embed_model(&self) -> &str {
        self.backend.embed_model()
    }

    pub fn parallelism(&self) -> usize {
        self.limiter.max
    }

    pub fn stats(&self) -> GatewayStats {
        self.stats.lock().unwrap().clone()
    }

    pub fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let _permit = self.limiter.acquire();
        let started = Instant::now();
        let mut attempt = 0u32;
        loop {
            self.stats.lock().unwrap().chat_attempts += 1;
            match self.backend.chat(req) {
                Ok(c) => {
                    let latency_ms = started.elapsed().as_secs_f64() * 1000.0;
                    let mut stats = self.stats.lock().unwrap();
                    stats.chat_calls += 1;
                    stats.chat_latencies_ms.push(latency_ms);
                    return Ok(ChatResponse {
                        text: c.text,
                        usage: c.usage,
                        latency_ms,
                        retries: attempt,
                    });
                }
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    let delay = self.backoff.saturating_mul(1u32 << attempt.min(16));
                    log::warn!("chat attempt {} failed ({e}); retrying in {delay:?}", attempt + 1);
                    self.stats.lock().unwrap().retries += 1;
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) if e.is_transient() && attempt > 0 => {
                    return Err(GatewayError::RetriesExhausted {
                        attempts: attempt + 1,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyText);
        }
        let _permit = self.limiter.acquire();
        let mut attempt = 0u32;
        let raw = loop {
            match self.backend.embed(text) {
                Ok(v) => break v,
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    self.stats.lock().unwrap().retries += 1;
                    std::thread::sleep(self.backoff.saturating_mul(1u32 << attempt.min(16)));
                    attempt += 1;
                }
                Err(e) if e.is_transient() && attempt > 0 => {
                    return Err(GatewayError::RetriesExhausted {
                        attempts: attempt + 1,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        };
        if let Some(expected) = self.backend.embed_dim() {
            if raw.len() != expected {
                return Err(GatewayError::DimensionMismatch {
                    expected,
                    got: raw.len(),
                });
            }
        }
        self.stats.lock().unwrap().embed_calls += 1;
        EmbeddingVector::normalized(raw)
    }
}
