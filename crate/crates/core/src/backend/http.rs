use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, RawCompletion};
use crate::domain::{ChatMessage, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts including the first.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Exponential backoff before retry number `retry` (0-based), capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
    #[serde(default)]
    model: Option<String>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

enum Attempt {
    Done(RawCompletion),
    Retry(BackendError),
    Fail(BackendError),
}

/// Blocking client for `POST {endpoint}/chat/completions`.
pub struct HttpBackend {
    agent: ureq::Agent,
    retry: RetryPolicy,
    requests: AtomicU64,
}

impl HttpBackend {
    pub fn new(retry: RetryPolicy, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        HttpBackend {
            agent: ureq::Agent::new_with_config(config),
            retry,
            requests: AtomicU64::new(0),
        }
    }

    /// Number of HTTP requests issued so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    fn url(cfg: &ModelConfig) -> String {
        format!("{}/chat/completions", cfg.endpoint.trim_end_matches('/'))
    }

    fn attempt(&self, url: &str, token: Option<&str>, body: &WireRequest<'_>, cfg: &ModelConfig) -> Attempt {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        let mut request = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let response = match request.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(BackendError::Network(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = match response.into_body().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(BackendError::Network(e.to_string())),
        };
        if !(200..300).contains(&status) {
            let err = BackendError::Http { status, body: text };
            return if status == 429 || status >= 500 {
                Attempt::Retry(err)
            } else {
                Attempt::Fail(err)
            };
        }
        let parsed: WireResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => return Attempt::Fail(BackendError::MalformedResponse(format!("{e}: {text}"))),
        };
        let Some(choice) = parsed.choices.into_iter().next() else {
            return Attempt::Fail(BackendError::MalformedResponse(format!("no choices: {text}")));
        };
        let usage = parsed.usage;
        Attempt::Done(RawCompletion {
            text: choice.message.content.unwrap_or_default(),
            prompt_tokens: usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: usage.as_ref().and_then(|u| u.completion_tokens),
            model_name: parsed.model.unwrap_or_else(|| cfg.model_name.clone()),
            latency_ms: started.elapsed().as_millis() as u64,
            cached: false,
        })
    }
}

impl ChatBackend for HttpBackend {
    fn send(&self, messages: &[ChatMessage], cfg: &ModelConfig) -> Result<RawCompletion, BackendError> {
        let token = if cfg.api_key_env.is_empty() {
            None
        } else {
            Some(
                std::env::var(&cfg.api_key_env)
                    .map_err(|_| BackendError::MissingApiKey(cfg.api_key_env.clone()))?,
            )
        };
        let url = Self::url(cfg);
        let body = WireRequest {
            model: &cfg.model_name,
            messages,
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
        };
        let attempts = self.retry.max_attempts.max(1);
        let mut retry = 0;
        loop {
            match self.attempt(&url, token.as_deref(), &body, cfg) {
                Attempt::Done(completion) => return Ok(completion),
                Attempt::Fail(err) => return Err(err),
                Attempt::Retry(err) => {
                    retry += 1;
                    if retry >= attempts {
                        return Err(BackendError::RetriesExhausted {
                            attempts,
                            last: Box::new(err),
                        });
                    }
                    tracing::debug!(%err, retry, "retrying chat completion");
                    thread::sleep(self.retry.delay(retry - 1));
                }
            }
        }
    }

    fn describe(&self) -> String {
        "http".into()
    }
}
