//! Chat-completion transport with retries, an on-disk response cache and a
//! scripted mock for offline runs.
//!
//! Requests use the OpenAI-compatible schema (`model`, `temperature`,
//! `messages`) and the reply text is read from `choices[0].message.content`.

mod cache;
mod transport;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::ResponseCache;
pub use transport::{
    HttpReply, HttpTransport, MockReply, MockTransport, Transport, TransportFailure,
};

/// Environment variable holding the API key for [`HttpTransport`].
pub const API_KEY_VAR: &str = "LLM_ENS_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("missing API credential: set {API_KEY_VAR}")]
    MissingCredential,
    #[error("invalid gateway config: {0}")]
    InvalidConfig(String),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("gave up after {attempts} attempts, last failure: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("malformed completion body: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("mock transport script exhausted")]
    ScriptExhausted,
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub cache_enabled: bool,
    pub cache_dir: PathBuf,
    /// First retry delay; doubles per attempt, jittered.
    pub backoff_base_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            endpoint_url: "https://api.openai.com/v1/chat/completions".to_string(),
            model_name: "gpt-4o-mini".to_string(),
            temperature: 1.0,
            timeout_ms: 30_000,
            max_retries: 3,
            cache_enabled: true,
            cache_dir: PathBuf::from(".llm-cache"),
            backoff_base_ms: 500,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(GatewayError::InvalidConfig(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if self.timeout_ms == 0 {
            return Err(GatewayError::InvalidConfig(
                "timeout_ms must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// Wire body of a completion request. Serializes to exactly
/// `{"model", "temperature", "messages"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "at least one message is required".into(),
            ));
        }
        if self.model.is_empty() {
            return Err(GatewayError::InvalidRequest("model is empty".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("chat request serializes")
    }

    pub fn cache_key(&self) -> CacheKey {
        CacheKey(hex::encode(Sha256::digest(self.to_json().as_bytes())))
    }
}

/// Hex SHA-256 of the canonical request JSON.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Reads `choices[0].message.content` from a completion body.
pub fn extract_content(body: &str) -> Result<String, GatewayError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(serde_json::Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message.content".into()))
}

pub struct LlmGateway {
    config: GatewayConfig,
    transport: Arc<dyn Transport>,
    cache: Option<ResponseCache>,
    attempts: AtomicU64,
}

impl LlmGateway {
    pub fn new(config: GatewayConfig, transport: Arc<dyn Transport>) -> Result<Self, GatewayError> {
        config.validate()?;
        let cache = if config.cache_enabled {
            Some(ResponseCache::open(&config.cache_dir)?)
        } else {
            None
        };
        Ok(LlmGateway {
            config,
            transport,
            cache,
            attempts: AtomicU64::new(0),
        })
    }

    /// Gateway over HTTP, reading the key from [`API_KEY_VAR`].
    pub fn from_env(config: GatewayConfig) -> Result<Self, GatewayError> {
        let transport = HttpTransport::from_env(&config.endpoint_url)?;
        Self::new(config, Arc::new(transport))
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Request carrying this gateway's model and temperature.
    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.config.model_name.clone(),
            temperature: self.config.temperature,
            messages,
        }
    }

    /// Transport attempts made so far, cache hits excluded.
    pub fn network_calls(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let key = request.cache_key();
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(hit);
        }
        let body = request.to_json();
        let timeout = Duration::from_millis(self.config.timeout_ms);
        let mut attempt = 0u32;
        loop {
            self.attempts.fetch_add(1, Ordering::SeqCst);
            let failure = match self.transport.post(&body, timeout) {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    let text = extract_content(&reply.body)?;
                    if let Some(cache) = &self.cache {
                        cache.put(&key, &text)?;
                    }
                    return Ok(text);
                }
                Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                    format!("HTTP {}", reply.status)
                }
                Ok(reply) => {
                    return Err(GatewayError::Status {
                        status: reply.status,
                        body: reply.body,
                    })
                }
                Err(TransportFailure::Timeout) => "timeout".to_string(),
                Err(TransportFailure::ScriptExhausted) => {
                    return Err(GatewayError::ScriptExhausted)
                }
                Err(TransportFailure::Connection(msg)) => return Err(GatewayError::Transport(msg)),
            };
            if attempt >= self.config.max_retries {
                return Err(GatewayError::RetriesExhausted {
                    attempts: attempt + 1,
                    last: failure,
                });
            }
            std::thread::sleep(self.backoff(attempt));
            attempt += 1;
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.config.backoff_base_ms as f64 * 2f64.powi(attempt as i32);
        if base == 0.0 {
            return Duration::ZERO;
        }
        let jitter: f64 = rand::thread_rng().gen_range(0.5..1.0);
        Duration::from_millis((base * jitter) as u64)
    }
}
