use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::Deserialize;
use serde_json::json;

use super::{Backend, ChatRequest, GatewayError, SamplingDefaults};

/// Connection settings for an OpenAI-compatible provider.
#[derive(Clone)]
pub struct BackendConfig {
    pub base_url: String,
    pub api_key: String,
    pub chat_model: String,
    pub embed_model: String,
    pub request_timeout: Duration,
    pub max_retries: u32,
    /// First backoff delay; doubled per attempt with ±20% jitter.
    pub backoff_base: Duration,
    /// Upper bound on in-flight requests through one backend.
    pub max_in_flight: usize,
}

impl std::fmt::Debug for BackendConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendConfig")
            .field("base_url", &self.base_url)
            .field("api_key", &"<redacted>")
            .field("chat_model", &self.chat_model)
            .field("embed_model", &self.embed_model)
            .field("request_timeout", &self.request_timeout)
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

impl BackendConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        BackendConfig {
            base_url: base_url.into(),
            api_key: String::new(),
            chat_model: "gpt-3.5-turbo".into(),
            embed_model: "text-embedding-ada-002".into(),
            request_timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            max_in_flight: 4,
        }
    }

    /// Reads `PF_BASE_URL` (required), `PF_API_KEY`, `PF_CHAT_MODEL` and
    /// `PF_EMBED_MODEL`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let base = std::env::var("PF_BASE_URL")
            .map_err(|_| GatewayError::InvalidRequest("PF_BASE_URL is not set".into()))?;
        let mut cfg = BackendConfig::new(base);
        if let Ok(key) = std::env::var("PF_API_KEY") {
            cfg.api_key = key;
        }
        if let Ok(model) = std::env::var("PF_CHAT_MODEL") {
            cfg.chat_model = model;
        }
        if let Ok(model) = std::env::var("PF_EMBED_MODEL") {
            cfg.embed_model = model;
        }
        Ok(cfg)
    }

    pub fn sampling_defaults(&self) -> SamplingDefaults {
        SamplingDefaults {
            model: self.chat_model.clone(),
            ..SamplingDefaults::default()
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut permits = self.permits.lock().expect("semaphore poisoned");
        while *permits == 0 {
            permits = self.freed.wait(permits).expect("semaphore poisoned");
        }
        *permits -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.freed.notify_one();
    }
}

enum Failure {
    Retryable { status: Option<u16>, message: String },
    Fatal(GatewayError),
}

pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
    in_flight: Semaphore,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.request_timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let in_flight = Semaphore::new(config.max_in_flight);
        HttpBackend { config, agent, in_flight }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.config.backoff_base.as_secs_f64() * 2f64.powi(attempt as i32);
        let jitter = rand::thread_rng().gen_range(0.8..=1.2);
        Duration::from_secs_f64(base * jitter)
    }

    fn post_once(&self, path: &str, body: &serde_json::Value) -> Result<String, Failure> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let _permit = self.in_flight.acquire();
        let mut call = self.agent.post(&url).header("Content-Type", "application/json");
        if !self.config.api_key.is_empty() {
            call = call.header("Authorization", &format!("Bearer {}", self.config.api_key));
        }
        let mut response = call.send_json(body).map_err(|e| Failure::Retryable {
            status: None,
            message: e.to_string(),
        })?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| Failure::Retryable {
            status: Some(status),
            message: e.to_string(),
        })?;
        match status {
            200..=299 => Ok(text),
            401 | 403 => Err(Failure::Fatal(GatewayError::Auth { status })),
            429 | 500..=599 => Err(Failure::Retryable {
                status: Some(status),
                message: format!("HTTP {status}"),
            }),
            _ => Err(Failure::Fatal(GatewayError::Rejected { status, body: text })),
        }
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<String, GatewayError> {
        let mut attempt = 0;
        loop {
            match self.post_once(path, body) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable { status, message }) => {
                    if attempt >= self.config.max_retries {
                        return Err(GatewayError::Unavailable {
                            status,
                            attempts: attempt + 1,
                            message,
                        });
                    }
                    let delay = self.backoff(attempt);
                    tracing::warn!(path, attempt, ?status, ?delay, "retrying provider call: {message}");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    index: usize,
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: usize,
    embedding: Vec<f64>,
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, GatewayError> {
        let text = self.post("chat/completions", &request.wire_payload())?;
        let mut parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| GatewayError::Protocol(format!("chat response: {e}")))?;
        parsed.choices.sort_by_key(|c| c.index);
        Ok(parsed
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect())
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let body = json!({ "model": self.config.embed_model, "input": texts });
        let text = self.post("embeddings", &body)?;
        let mut parsed: EmbeddingResponse =
            serde_json::from_str(&text).map_err(|e| GatewayError::Protocol(format!("embedding response: {e}")))?;
        parsed.data.sort_by_key(|d| d.index);
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }
}
