//! Chat-completion gateway: request/response types, the backend trait and
//! its implementations (HTTP, fixture mock, replay cache, synthetic).

mod batch;
mod counting;
mod http;
mod mock;
mod replay;
mod synthetic;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::sha256_hex;

pub use batch::{batch_complete, batch_complete_each, BatchPartialFailure};
pub use counting::{CountingBackend, TransportEvent};
pub use http::{HttpLlmBackend, RetryPolicy, Sleeper, API_KEY_ENV, BASE_URL_ENV};
pub use mock::{write_fixture, FixtureRecorder, MockBackend};
pub use replay::{ReplayBackend, ReplayCache, ReplayRecord};
pub use synthetic::SyntheticLlm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: usize,
    pub sampling_temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_seed: Option<u64>,
}

/// The hashed view of a request: seed is excluded on purpose so that a
/// cache key only changes with generation parameters that shape the text.
#[derive(Serialize)]
struct CanonicalRequest<'a> {
    max_tokens: usize,
    messages: &'a [ChatMessage],
    model: &'a str,
    temperature: f64,
}

impl ChatRequest {
    pub fn user(
        model: impl Into<String>,
        content: impl Into<String>,
        max_tokens: usize,
        sampling_temperature: f64,
    ) -> Self {
        Self {
            model: model.into(),
            messages: vec![ChatMessage {
                role: Role::User,
                content: content.into(),
            }],
            max_tokens,
            sampling_temperature,
            request_seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.request_seed = Some(seed);
        self
    }

    /// Compact JSON of (max_tokens, messages, model, temperature) with
    /// sorted keys.
    pub fn canonical_json(&self) -> String {
        let canonical = CanonicalRequest {
            max_tokens: self.max_tokens,
            messages: &self.messages,
            model: &self.model,
            temperature: self.sampling_temperature,
        };
        let value = serde_json::to_value(canonical).expect("request serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// SHA-256 of [`Self::canonical_json`], hex encoded.
    pub fn request_hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    pub fn last_user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self.messages.last() {
            None => out.push("request has no messages".to_string()),
            Some(m) if m.role != Role::User => out.push("last message is not from the user".into()),
            Some(_) => {}
        }
        if self.max_tokens == 0 {
            out.push("max_tokens must be positive".to_string());
        }
        if self.sampling_temperature.is_nan() || self.sampling_temperature < 0.0 {
            out.push("temperature must be >= 0".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub model: String,
    pub finish_reason: String,
    #[serde(default)]
    pub usage_tokens: Option<u64>,
}

impl LlmResponse {
    pub fn stop(text: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            model: model.into(),
            finish_reason: "stop".to_string(),
            usage_tokens: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("LLM unavailable after {attempts} attempt(s): {last}")]
    LlmUnavailable { attempts: u32, last: String },
    #[error("no mock fixture for request {hash}")]
    MockFixtureMissing { hash: String },
    #[error("authentication rejected (HTTP {status})")]
    AuthError { status: u16 },
    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed LLM response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("missing configuration: {0}")]
    Config(String),
    #[error("cache I/O error: {0}")]
    Io(String),
}

/// Anything that can answer a chat request. Implementations must be safe to
/// call from several threads at once.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<LlmResponse, LlmError>;
}

impl<B: LlmBackend + ?Sized> LlmBackend for &B {
    fn complete(&self, req: &ChatRequest) -> Result<LlmResponse, LlmError> {
        (**self).complete(req)
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for Box<B> {
    fn complete(&self, req: &ChatRequest) -> Result<LlmResponse, LlmError> {
        (**self).complete(req)
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for Arc<B> {
    fn complete(&self, req: &ChatRequest) -> Result<LlmResponse, LlmError> {
        (**self).complete(req)
    }
}

/// Validates the request and resolves it through `backend`.
pub fn complete(req: &ChatRequest, backend: &dyn LlmBackend) -> Result<LlmResponse, LlmError> {
    let violations = req.violations();
    if !violations.is_empty() {
        return Err(LlmError::InvalidRequest(violations.join("; ")));
    }
    backend.complete(req)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_seed_but_tracks_parameters() {
        let a = ChatRequest::user("m", "hello", 50, 0.7);
        assert_eq!(a.request_hash(), a.clone().with_seed(9).request_hash());
        let mut b = a.clone();
        b.max_tokens = 51;
        assert_ne!(a.request_hash(), b.request_hash());
        let mut c = a.clone();
        c.sampling_temperature = 0.8;
        assert_ne!(a.request_hash(), c.request_hash());
    }

    #[test]
    fn canonical_json_is_sorted_and_compact() {
        let a = ChatRequest::user("m", "hi", 5, 0.5);
        assert_eq!(
            a.canonical_json(),
            r#"{"max_tokens":5,"messages":[{"content":"hi","role":"user"}],"model":"m","temperature":0.5}"#
        );
    }

    #[test]
    fn last_message_must_be_user() {
        let mut r = ChatRequest::user("m", "hi", 5, 0.5);
        r.messages.push(ChatMessage {
            role: Role::Assistant,
            content: "x".into(),
        });
        assert_eq!(r.violations().len(), 1);
        let err = complete(&r, &SyntheticLlm::new("m")).unwrap_err();
        assert!(matches!(err, LlmError::InvalidRequest(_)));
    }
}
