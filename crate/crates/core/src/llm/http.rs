use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::Deserialize;
use serde_json::json;

use super::{ChatRequest, LlmBackend, LlmError, LlmResponse};
use crate::http::{join_url, HttpTransport, Method, TransportError, UreqTransport};

pub const API_KEY_ENV: &str = "MPVR_LLM_API_KEY";
pub const BASE_URL_ENV: &str = "MPVR_LLM_BASE_URL";

/// Exponential backoff: `base_delay * 2^k` for retry `k`, with a relative
/// jitter applied to every delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    pub fn nominal_delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry)
    }

    pub fn delay(&self, retry: u32) -> Duration {
        let nominal = self.nominal_delay(retry).as_secs_f64();
        let factor = if self.jitter > 0.0 {
            rand::rng().random_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        Duration::from_secs_f64(nominal * factor)
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Client for an OpenAI-compatible `POST {base_url}/chat/completions`.
pub struct HttpLlmBackend<T = UreqTransport> {
    base_url: String,
    api_key: Option<String>,
    transport: T,
    retry: RetryPolicy,
    sleeper: Sleeper,
}

impl HttpLlmBackend<UreqTransport> {
    /// Reads the endpoint and credential from `MPVR_LLM_BASE_URL` and
    /// `MPVR_LLM_API_KEY`; `base_url` overrides the environment.
    pub fn from_env(base_url: Option<&str>) -> Result<Self, LlmError> {
        let base_url = match base_url {
            Some(url) => url.to_string(),
            None => std::env::var(BASE_URL_ENV)
                .map_err(|_| LlmError::Config(format!("{BASE_URL_ENV} is not set")))?,
        };
        let api_key = std::env::var(API_KEY_ENV).ok();
        Ok(Self::new(base_url, api_key, UreqTransport::default()))
    }
}

impl<T: HttpTransport> HttpLlmBackend<T> {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, transport: T) -> Self {
        Self {
            base_url: base_url.into(),
            api_key,
            transport,
            retry: RetryPolicy::default(),
            sleeper: Arc::new(std::thread::sleep),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    fn body(req: &ChatRequest) -> String {
        let mut body = json!({
            "model": req.model,
            "messages": req.messages,
            "max_tokens": req.max_tokens,
            "temperature": req.sampling_temperature,
        });
        if let Some(seed) = req.request_seed {
            body["seed"] = json!(seed);
        }
        body.to_string()
    }
}

enum Attempt {
    Done(LlmResponse),
    Retryable(String),
    Fatal(LlmError),
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    model: Option<String>,
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
    total_tokens: Option<u64>,
}

fn parse_reply(body: &str, requested_model: &str) -> Result<LlmResponse, LlmError> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LlmError::MalformedResponse("no choices".to_string()))?;
    Ok(LlmResponse {
        text: choice.message.content.unwrap_or_default(),
        model: wire.model.unwrap_or_else(|| requested_model.to_string()),
        finish_reason: choice.finish_reason.unwrap_or_else(|| "unknown".to_string()),
        usage_tokens: wire.usage.and_then(|u| u.total_tokens),
    })
}

impl<T: HttpTransport> HttpLlmBackend<T> {
    fn attempt(&self, url: &str, headers: &[(String, String)], body: &str, model: &str) -> Attempt {
        match self.transport.request(Method::Post, url, headers, Some(body)) {
            Err(TransportError::Timeout) => Attempt::Retryable("timeout".to_string()),
            Err(e) => Attempt::Retryable(e.to_string()),
            Ok(reply) => match reply.status {
                200..=299 => match parse_reply(&reply.body, model) {
                    Ok(resp) => Attempt::Done(resp),
                    Err(e) => Attempt::Fatal(e),
                },
                401 | 403 => Attempt::Fatal(LlmError::AuthError {
                    status: reply.status,
                }),
                408 | 429 | 500..=599 => Attempt::Retryable(format!("HTTP {}", reply.status)),
                status => Attempt::Fatal(LlmError::Rejected {
                    status,
                    body: reply.body,
                }),
            },
        }
    }
}

impl<T: HttpTransport> LlmBackend for HttpLlmBackend<T> {
    fn complete(&self, req: &ChatRequest) -> Result<LlmResponse, LlmError> {
        let url = join_url(&self.base_url, "chat/completions");
        let mut headers = Vec::new();
        if let Some(key) = &self.api_key {
            headers.push(("authorization".to_string(), format!("Bearer {key}")));
        }
        let body = Self::body(req);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&url, &headers, &body, &req.model) {
                Attempt::Done(resp) => return Ok(resp),
                Attempt::Fatal(err) => return Err(err),
                Attempt::Retryable(reason) => {
                    let retry = attempts - 1;
                    if retry >= self.retry.max_retries {
                        return Err(LlmError::LlmUnavailable {
                            attempts,
                            last: reason,
                        });
                    }
                    log::warn!("LLM request failed ({reason}); retry {} of {}", retry + 1, self.retry.max_retries);
                    (self.sleeper)(self.retry.delay(retry));
                }
            }
        }
    }
}
