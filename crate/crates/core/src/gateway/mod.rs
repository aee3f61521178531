//! Provider-agnostic chat-completion and embedding access.
//!
//! Every LLM-touching module talks to a [`Gateway`], which wraps a
//! [`Backend`] and enforces the request/response contract (request validity,
//! completion count, unit-norm embeddings). Backends:
//! - `http` - OpenAI-compatible JSON over HTTP with retry and backoff
//! - `mock` - deterministic scripted backend for tests and desk simulations
//! - `cache` - content-addressed response cache wrapping any backend

mod cache;
mod http;
mod mock;

pub use cache::{parse_cache_line, CacheEntry, CachedBackend};
pub use http::{BackendConfig, HttpBackend};
pub use mock::{hashing_embedding, MockBackend, Responder};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication rejected by provider (HTTP {status})")]
    Auth { status: u16 },
    #[error("provider rejected request (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    Unavailable {
        status: Option<u16>,
        attempts: u32,
        message: String,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("mock backend has no script for {0}")]
    Unscripted(String),
    #[error("cache io: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: MessageRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: MessageRole::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: MessageRole::Assistant, content: content.into() }
    }
}

/// A chat-completion request. `task` names the prompt template that produced
/// the request; it never goes on the wire and is not part of the fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub n: u32,
    #[serde(skip)]
    pub task: Option<String>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidRequest(m.to_string()));
        if self.messages.is_empty() {
            return bad("no messages");
        }
        for (i, msg) in self.messages.iter().enumerate() {
            match msg.role {
                MessageRole::System if i != 0 => return bad("system message must be first"),
                MessageRole::User | MessageRole::Assistant if msg.content.trim().is_empty() => {
                    return bad("empty user/assistant content")
                }
                _ => {}
            }
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be >= 0");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if self.n == 0 {
            return bad("n must be positive");
        }
        Ok(())
    }

    /// Wire payload: `{"model","messages","temperature","top_p","max_tokens","n"}`.
    pub fn wire_payload(&self) -> Value {
        serde_json::to_value(self).expect("chat request serializes")
    }

    pub fn with_task(mut self, task: impl Into<String>) -> Self {
        self.task = Some(task.into());
        self
    }
}

/// Stable hex digest of a request: SHA-256 over its canonical JSON (object
/// keys sorted, list order preserved).
pub fn fingerprint(request: &ChatRequest) -> String {
    let canonical = canonical_json(&request.wire_payload());
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializes a JSON value with object keys sorted at every depth,
/// independent of the `serde_json` map implementation in use.
pub fn canonical_json(value: &Value) -> String {
    fn write(value: &Value, out: &mut String) {
        match value {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(k).expect("string serializes"));
                    out.push(':');
                    write(&map[k], out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(item, out);
                }
                out.push(']');
            }
            other => out.push_str(&other.to_string()),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

/// Raw provider access. Implementations need not validate or normalize;
/// [`Gateway`] does that.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, GatewayError>;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;
}

/// Default sampling parameters for requests built through [`Gateway::request`].
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDefaults {
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for SamplingDefaults {
    fn default() -> Self {
        SamplingDefaults {
            model: "mock".into(),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 512,
        }
    }
}

#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    defaults: SamplingDefaults,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("defaults", &self.defaults).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, defaults: SamplingDefaults) -> Self {
        Gateway { backend, defaults }
    }

    pub fn mock(backend: Arc<MockBackend>) -> Self {
        Gateway::new(backend, SamplingDefaults::default())
    }

    pub fn defaults(&self) -> &SamplingDefaults {
        &self.defaults
    }

    /// Starts a single-completion request for `task` with default sampling.
    pub fn request(&self, task: &str, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.defaults.model.clone(),
            messages,
            temperature: self.defaults.temperature,
            top_p: self.defaults.top_p,
            max_tokens: self.defaults.max_tokens,
            n: 1,
            task: Some(task.to_string()),
        }
    }

    /// Returns exactly `request.n` completion texts.
    pub fn chat(&self, request: &ChatRequest) -> Result<Vec<String>, GatewayError> {
        request.validate()?;
        let out = self.backend.complete(request)?;
        if out.len() != request.n as usize {
            return Err(GatewayError::Protocol(format!(
                "expected {} completions, got {}",
                request.n,
                out.len()
            )));
        }
        Ok(out)
    }

    /// Convenience for `n = 1`.
    pub fn chat_one(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let mut out = self.chat(request)?;
        Ok(out.swap_remove(0))
    }

    /// Embeds `texts`, returning unit-length vectors of a common dimension in
    /// input order.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("no texts to embed".into()));
        }
        let raw = self.backend.embed(texts)?;
        if raw.len() != texts.len() {
            return Err(GatewayError::Protocol(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                raw.len()
            )));
        }
        let dim = raw[0].len();
        raw.into_iter()
            .map(|v| {
                if v.len() != dim || dim == 0 {
                    return Err(GatewayError::Protocol("embedding dimension mismatch".into()));
                }
                normalize(v).ok_or_else(|| GatewayError::Protocol("zero or non-finite embedding".into()))
            })
            .collect()
    }
}

/// Scales `v` to unit L2 norm; `None` for zero or non-finite vectors.
pub fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}
