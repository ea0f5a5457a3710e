//! Thought generators: the language-model boundary.
//!
//! Every backend answers a [`GenRequest`] with `n` texts plus token, cost and
//! latency accounting. The mock and replay backends are pure functions of
//! their inputs; the HTTP client is the only one that touches the network.

mod mock;
mod replay;
#[cfg(feature = "http")]
mod http;

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canonical;

pub use mock::{LatencyModel, MockBackend, Responder, ScriptedResponder};
pub use replay::{RecordLine, RecordingBackend, ReplayBackend};
#[cfg(feature = "http")]
pub use http::{HttpBackend, HttpConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub n: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub want_logprobs: bool,
    /// Ordinal of the first requested sample. Sample `i` of the response is
    /// sample `sample_offset + i` of the underlying distribution.
    #[serde(default)]
    pub sample_offset: u32,
}

impl GenRequest {
    pub fn new(messages: Vec<Message>) -> Self {
        GenRequest { messages, temperature: 0.0, n: 1, max_tokens: None, want_logprobs: false, sample_offset: 0 }
    }

    pub fn with_n(mut self, n: u32) -> Self {
        self.n = n;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_offset(mut self, offset: u32) -> Self {
        self.sample_offset = offset;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.n == 0 {
            return Err(BackendError::Invalid("n must be at least 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::Invalid("temperature must be non-negative".into()));
        }
        if self.messages.is_empty() {
            return Err(BackendError::Invalid("request has no messages".into()));
        }
        Ok(())
    }

    /// Content of the last user message.
    pub fn user_text(&self) -> &str {
        self.messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str()).unwrap_or("")
    }

    /// Request with whitespace-collapsed message text, used for hashing.
    pub fn normalized(&self) -> Value {
        let msgs: Vec<Value> = self
            .messages
            .iter()
            .map(|m| json!({"role": m.role, "content": collapse_whitespace(&m.content)}))
            .collect();
        json!({
            "messages": msgs,
            "temperature": self.temperature,
            "n": self.n,
            "max_tokens": self.max_tokens,
            "want_logprobs": self.want_logprobs,
            "sample_offset": self.sample_offset,
        })
    }

    /// Identity of the prompt itself: normalized, without `n` or `sample_offset`.
    pub fn prompt_identity(&self) -> Value {
        let mut v = self.normalized();
        if let Value::Object(m) = &mut v {
            m.remove("n");
            m.remove("sample_offset");
        }
        v
    }

    pub fn request_hash(&self) -> String {
        canonical::hash_of(&self.normalized())
    }

    pub fn prompt_hash(&self) -> String {
        canonical::hash_of(&self.prompt_identity())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenResponse {
    pub texts: Vec<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost_usd: f64,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("mock has no script entry for request {0}")]
    MockMiss(String),
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("http error {status}: {message}")]
    Http { status: u16, message: String },
    #[error("unrecognized prompt: {0}")]
    Unrecognized(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("network access is disabled")]
    NetworkForbidden,
}

impl BackendError {
    /// Failures worth retrying with the same request.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Http { status, .. } if *status == 429 || *status >= 500 || *status == 0)
    }
}

/// A source of thoughts. Implementations must tolerate concurrent calls.
pub trait ThoughtGenerator: Send + Sync {
    /// Stable identity; part of every cache key.
    fn id(&self) -> &str;
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError>;
}

/// USD per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

impl Default for PriceTable {
    /// Public list prices of a common hosted chat model, used as placeholders.
    fn default() -> Self {
        PriceTable { input_per_million: 2.50, output_per_million: 10.00 }
    }
}

impl PriceTable {
    pub fn cost(&self, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        (prompt_tokens as f64 * self.input_per_million + completion_tokens as f64 * self.output_per_million) / 1e6
    }

    pub fn load(path: &std::path::Path) -> Result<PriceTable, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Io(e.to_string()))
    }
}

/// Token proxy: unicode word count × 1.3, rounded up.
pub fn token_proxy(text: &str) -> u64 {
    let words = text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).count() as u64;
    (words * 13).div_ceil(10)
}

pub fn prompt_tokens(messages: &[Message]) -> u64 {
    messages.iter().map(|m| token_proxy(&m.content)).sum()
}

pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

static NETWORK_FORBIDDEN: AtomicBool = AtomicBool::new(false);

/// Process-wide switch that makes every network-capable backend refuse to connect.
pub fn forbid_network(forbid: bool) {
    NETWORK_FORBIDDEN.store(forbid, Ordering::SeqCst);
}

pub fn network_forbidden() -> bool {
    NETWORK_FORBIDDEN.load(Ordering::SeqCst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn price_table_arithmetic() {
        let cost = PriceTable::default().cost(1000, 500);
        assert!((cost - 0.0075).abs() < 1e-12);
    }

    #[test]
    fn token_proxy_rounds_up() {
        assert_eq!(token_proxy(""), 0);
        assert_eq!(token_proxy("one"), 2);
        assert_eq!(token_proxy("a b c d e f g h i j"), 13);
        assert_eq!(token_proxy("2 + 8 = 10 (left: 8 10 14)"), 10);
    }

    #[test]
    fn whitespace_does_not_change_hash() {
        let a = GenRequest::new(vec![Message::user("Input:  2 8\n8 14")]);
        let b = GenRequest::new(vec![Message::user("Input: 2 8 8   14 ")]);
        assert_eq!(a.request_hash(), b.request_hash());
        assert_ne!(a.request_hash(), a.clone().with_offset(1).request_hash());
        assert_eq!(a.prompt_hash(), a.clone().with_n(3).with_offset(2).prompt_hash());
    }

    #[test]
    fn zero_samples_rejected() {
        let r = GenRequest::new(vec![Message::user("x")]).with_n(0);
        assert!(matches!(r.validate(), Err(BackendError::Invalid(_))));
    }
}
