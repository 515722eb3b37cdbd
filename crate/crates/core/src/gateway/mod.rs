//! Uniform access to chat-completion and embedding backends.
//!
//! A [`Gateway`] owns the registered backends, the retry policy, per-backend
//! token-bucket limiters, and the write-ahead [`CallLog`]. Backends only
//! perform single attempts; retry and backoff live here so every backend
//! (HTTP or mock) gets the same policy and the same audit trail.

mod calllog;
mod http;
mod limiter;
pub mod mock;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calllog::{CallLog, CallPhase, CallRecord};
pub use http::{parse_chat_response, parse_embedding_response, HttpChatBackend, HttpEmbeddingBackend};
pub use limiter::TokenBucket;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_tag: Option<String>,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage { role, content: content.into(), speaker_tag: None }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }

    pub fn with_speaker(mut self, speaker: impl Into<String>) -> Self {
        self.speaker_tag = Some(speaker.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Chat,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling { temperature: 1.0, max_tokens: 512 }
    }
}

/// How one call site reaches one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendBinding {
    pub backend_id: String,
    pub kind: BackendKind,
    pub endpoint: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub auth: Option<String>,
    #[serde(default)]
    pub sampling: Sampling,
}

impl BackendBinding {
    pub fn chat(backend_id: impl Into<String>, endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        BackendBinding {
            backend_id: backend_id.into(),
            kind: BackendKind::Chat,
            endpoint: endpoint.into(),
            model_name: model.into(),
            auth: None,
            sampling: Sampling::default(),
        }
    }

    pub fn embedding(
        backend_id: impl Into<String>,
        endpoint: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        BackendBinding { kind: BackendKind::Embedding, ..Self::chat(backend_id, endpoint, model) }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.sampling.temperature = temperature;
        self
    }

    pub fn with_auth(mut self, env_var: impl Into<String>) -> Self {
        self.auth = Some(env_var.into());
        self
    }

    fn validate(&self, expected: BackendKind) -> Result<(), GatewayError> {
        if self.kind != expected {
            return Err(GatewayError::Precondition(format!(
                "binding {} is {:?}, expected {:?}",
                self.backend_id, self.kind, expected
            )));
        }
        if self.sampling.temperature.is_nan() || self.sampling.temperature < 0.0 {
            return Err(GatewayError::Precondition("temperature must be >= 0".into()));
        }
        if self.sampling.max_tokens == 0 {
            return Err(GatewayError::Precondition("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// A dense embedding. Vectors returned by the gateway are unit-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector { values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// L2-normalized copy, or `None` for a zero or non-finite vector.
    pub fn normalized(&self) -> Option<EmbeddingVector> {
        let norm = self.norm();
        if !norm.is_finite() || norm == 0.0 {
            return None;
        }
        Some(EmbeddingVector { values: self.values.iter().map(|v| v / norm).collect() })
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

/// Outcome of one failed attempt against a backend.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendFailure {
    /// Non-success HTTP status; 0 means the connection itself failed.
    Transport { status: u16, message: String },
    RateLimited { retry_after: Option<Duration> },
    BadResponse(String),
}

impl BackendFailure {
    fn retryable(&self) -> bool {
        match self {
            BackendFailure::Transport { status, .. } => matches!(status, 0 | 408 | 500..=599),
            BackendFailure::RateLimited { .. } => true,
            BackendFailure::BadResponse(_) => false,
        }
    }

    fn describe(&self) -> String {
        match self {
            BackendFailure::Transport { status, message } => format!("transport status {status}: {message}"),
            BackendFailure::RateLimited { retry_after } => format!("rate limited (retry after {retry_after:?})"),
            BackendFailure::BadResponse(m) => format!("bad response: {m}"),
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, binding: &BackendBinding, history: &[ChatMessage]) -> Result<String, BackendFailure>;
}

pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, binding: &BackendBinding, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendFailure>;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no backend registered as {0:?}")]
    UnknownBackend(String),
    #[error("transport failure (status {status}) after {attempts} attempt(s): {message}")]
    Transport { status: u16, message: String, attempts: u32 },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { retry_after: Option<Duration>, attempts: u32 },
    #[error("bad response after {attempts} attempt(s): {message}")]
    BadResponse { message: String, attempts: u32 },
}

impl GatewayError {
    fn from_failure(failure: BackendFailure, attempts: u32) -> Self {
        match failure {
            BackendFailure::Transport { status, message } => GatewayError::Transport { status, message, attempts },
            BackendFailure::RateLimited { retry_after } => GatewayError::RateLimited { retry_after, attempts },
            BackendFailure::BadResponse(message) => GatewayError::BadResponse { message, attempts },
        }
    }
}

/// Exponential backoff with bounded jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Fractional jitter in [0, 1); 0.1 means ±10 %.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            jitter: 0.1,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; for tests and mocks.
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy { max_attempts, base_delay: Duration::ZERO, max_delay: Duration::ZERO, jitter: 0.0 }
    }

    fn delay(&self, attempt: u32, hint: Option<Duration>, unit_noise: f64) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << (attempt - 1).min(16));
        let base = hint.map_or(exp, |h| h.max(exp)).min(self.max_delay);
        let factor = 1.0 + self.jitter * (2.0 * unit_noise - 1.0);
        base.mul_f64(factor.max(0.0)).min(self.max_delay)
    }
}

/// Identifies the caller of a gateway request in the call log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CallTag {
    pub purpose: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
}

impl CallTag {
    pub fn new(purpose: impl Into<String>) -> Self {
        CallTag { purpose: purpose.into(), ..Default::default() }
    }

    pub fn session(mut self, session_id: impl Into<String>) -> Self {
        self.session_id = Some(session_id.into());
        self
    }

    pub fn speaker(mut self, speaker: impl Into<String>) -> Self {
        self.speaker = Some(speaker.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub message: ChatMessage,
    pub attempts: u32,
}

pub struct Gateway {
    chat: HashMap<String, Arc<dyn ChatBackend>>,
    embedding: HashMap<String, Arc<dyn EmbeddingBackend>>,
    limiters: HashMap<String, TokenBucket>,
    retry: RetryPolicy,
    log: CallLog,
    rng: Mutex<ChaCha8Rng>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("chat", &self.chat.keys().collect::<Vec<_>>())
            .field("embedding", &self.embedding.keys().collect::<Vec<_>>())
            .field("retry", &self.retry)
            .finish()
    }
}

#[derive(Default)]
pub struct GatewayBuilder {
    chat: HashMap<String, Arc<dyn ChatBackend>>,
    embedding: HashMap<String, Arc<dyn EmbeddingBackend>>,
    limiters: HashMap<String, TokenBucket>,
    retry: Option<RetryPolicy>,
    log: Option<CallLog>,
    seed: u64,
}

impl GatewayBuilder {
    pub fn chat_backend(mut self, id: impl Into<String>, backend: Arc<dyn ChatBackend>) -> Self {
        self.chat.insert(id.into(), backend);
        self
    }

    pub fn embedding_backend(mut self, id: impl Into<String>, backend: Arc<dyn EmbeddingBackend>) -> Self {
        self.embedding.insert(id.into(), backend);
        self
    }

    pub fn rate_limit(mut self, id: impl Into<String>, requests_per_minute: u32) -> Self {
        self.limiters.insert(id.into(), TokenBucket::per_minute(requests_per_minute));
        self
    }

    pub fn retry(mut self, policy: RetryPolicy) -> Self {
        self.retry = Some(policy);
        self
    }

    pub fn call_log(mut self, log: CallLog) -> Self {
        self.log = Some(log);
        self
    }

    /// Seeds the jitter RNG.
    pub fn rng_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            chat: self.chat,
            embedding: self.embedding,
            limiters: self.limiters,
            retry: self.retry.unwrap_or_default(),
            log: self.log.unwrap_or_default(),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(self.seed)),
        }
    }
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder::default()
    }

    pub fn call_log(&self) -> &CallLog {
        &self.log
    }

    pub fn retry_policy(&self) -> &RetryPolicy {
        &self.retry
    }

    pub fn complete_chat(&self, binding: &BackendBinding, history: &[ChatMessage]) -> Result<ChatMessage, GatewayError> {
        self.complete_chat_tagged(&CallTag::new("chat"), binding, history).map(|c| c.message)
    }

    /// Sends `history` to the binding's chat backend, retrying per policy.
    ///
    /// The request is appended to the call log before each dispatch.
    pub fn complete_chat_tagged(
        &self,
        tag: &CallTag,
        binding: &BackendBinding,
        history: &[ChatMessage],
    ) -> Result<Completion, GatewayError> {
        binding.validate(BackendKind::Chat)?;
        validate_history(history)?;
        let backend = self
            .chat
            .get(&binding.backend_id)
            .ok_or_else(|| GatewayError::UnknownBackend(binding.backend_id.clone()))?;

        let (content, attempts) = self.with_retry(tag, binding, Some(history), None, |b| backend.complete(b, history))?;
        if content.trim().is_empty() {
            let err = GatewayError::BadResponse { message: "empty assistant content".into(), attempts };
            return Err(err);
        }
        Ok(Completion { message: ChatMessage::assistant(content), attempts })
    }

    /// Embeds `texts` in one request; vectors come back unit-norm, in input order.
    pub fn embed_texts(&self, binding: &BackendBinding, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        binding.validate(BackendKind::Embedding)?;
        if texts.is_empty() {
            return Err(GatewayError::Precondition("embed_texts needs at least one text".into()));
        }
        let backend = self
            .embedding
            .get(&binding.backend_id)
            .ok_or_else(|| GatewayError::UnknownBackend(binding.backend_id.clone()))?;
        let tag = CallTag::new("embed");
        let (raw, attempts) = self.with_retry(&tag, binding, None, Some(texts.len()), |b| {
            let vectors = backend.embed(b, texts)?;
            if vectors.len() != texts.len() {
                return Err(BackendFailure::BadResponse(format!(
                    "expected {} vectors, got {}",
                    texts.len(),
                    vectors.len()
                )));
            }
            Ok(vectors)
        })?;
        let dim = raw[0].len();
        let mut out = Vec::with_capacity(raw.len());
        for values in raw {
            if values.len() != dim || dim == 0 {
                return Err(GatewayError::BadResponse { message: "inconsistent embedding dimension".into(), attempts });
            }
            let v = EmbeddingVector::new(values)
                .normalized()
                .ok_or(GatewayError::BadResponse { message: "zero or non-finite embedding".into(), attempts })?;
            out.push(v);
        }
        Ok(out)
    }

    fn with_retry<T, F>(
        &self,
        tag: &CallTag,
        binding: &BackendBinding,
        messages: Option<&[ChatMessage]>,
        text_count: Option<usize>,
        mut attempt_fn: F,
    ) -> Result<(T, u32), GatewayError>
    where
        F: FnMut(&BackendBinding) -> Result<T, BackendFailure>,
        T: LogContent,
    {
        let max_attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            if let Some(limiter) = self.limiters.get(&binding.backend_id) {
                limiter.acquire();
            }
            self.log.record(CallRecord::request(tag, binding, attempt, messages, text_count));
            match attempt_fn(binding) {
                Ok(value) => {
                    self.log.record(CallRecord::response(tag, binding, attempt, value.log_content()));
                    return Ok((value, attempt));
                }
                Err(failure) => {
                    self.log.record(CallRecord::failure(tag, binding, attempt, failure.describe()));
                    if !failure.retryable() || attempt >= max_attempts {
                        return Err(GatewayError::from_failure(failure, attempt));
                    }
                    let hint = match &failure {
                        BackendFailure::RateLimited { retry_after } => *retry_after,
                        _ => None,
                    };
                    let noise: f64 = self.rng.lock().expect("rng lock").random();
                    let delay = self.retry.delay(attempt, hint, noise);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
            }
        }
    }
}

trait LogContent {
    fn log_content(&self) -> String;
}

impl LogContent for String {
    fn log_content(&self) -> String {
        self.clone()
    }
}

impl LogContent for Vec<Vec<f64>> {
    fn log_content(&self) -> String {
        format!("{} vector(s) of dimension {}", self.len(), self.first().map_or(0, Vec::len))
    }
}

fn validate_history(history: &[ChatMessage]) -> Result<(), GatewayError> {
    let first = history
        .first()
        .ok_or_else(|| GatewayError::Precondition("chat history is empty".into()))?;
    if first.role != Role::System {
        return Err(GatewayError::Precondition("chat history must begin with a system message".into()));
    }
    for msg in history {
        if msg.role != Role::System && msg.content.trim().is_empty() {
            return Err(GatewayError::Precondition(format!("empty {} message", msg.role.as_str())));
        }
    }
    Ok(())
}
