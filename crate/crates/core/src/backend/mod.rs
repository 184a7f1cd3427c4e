//! Uniform chat-completion interface over a live endpoint, a scripted mock
//! and a persistent cache.

mod cache;
mod http;
mod mock;
mod usage;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheKey, DiskCache};
pub use http::{HttpBackend, RetryPolicy};
pub use mock::{mock_program, Matcher, MockBackend, MockRule};
pub use usage::{usage_totals, whitespace_tokens, UsageTotals};

use crate::domain::{ChatMessage, ModelConfig, PromptBundle};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("network failure: {0}")]
    Network(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response body: {0}")]
    MalformedResponse(String),
    #[error("environment variable `{0}` with the API key is not set")]
    MissingApiKey(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<BackendError> },
    #[error("mock script: {0}")]
    MockScript(String),
    #[error("replay mode: no cached completion for prompt digest {0}")]
    ReplayMiss(CacheKey),
    #[error("invalid model config: {0}")]
    Config(#[from] crate::domain::DomainError),
    #[error("cache write failed: {0}")]
    Cache(#[from] std::io::Error),
}

/// A completion plus usage as reported by the endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCompletion {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub model_name: String,
    /// Time the backend spent producing the completion; zero for scripted backends.
    #[serde(default)]
    pub latency_ms: u64,
    /// Whether this value was served from the cache. Not persisted.
    #[serde(skip)]
    pub cached: bool,
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, messages: &[ChatMessage], cfg: &ModelConfig) -> Result<RawCompletion, BackendError>;

    fn describe(&self) -> String;
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn send(&self, messages: &[ChatMessage], cfg: &ModelConfig) -> Result<RawCompletion, BackendError> {
        (**self).send(messages, cfg)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Backend for cache-only runs: every miss is an error and nothing leaves the process.
#[derive(Debug, Default)]
pub struct ReplayBackend;

impl ChatBackend for ReplayBackend {
    fn send(&self, messages: &[ChatMessage], cfg: &ModelConfig) -> Result<RawCompletion, BackendError> {
        Err(BackendError::ReplayMiss(CacheKey::new(
            &cfg.model_name,
            cfg.temperature,
            cfg.max_tokens,
            messages,
        )))
    }

    fn describe(&self) -> String {
        "replay".into()
    }
}

/// Cache-first completion client. Safe to share between worker threads.
pub struct CompletionClient {
    backend: Box<dyn ChatBackend>,
    cache: Option<DiskCache>,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl CompletionClient {
    pub fn new(backend: Box<dyn ChatBackend>, cache: Option<DiskCache>) -> Self {
        CompletionClient {
            backend,
            cache,
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn cache(&self) -> Option<&DiskCache> {
        self.cache.as_ref()
    }

    pub fn backend_description(&self) -> String {
        self.backend.describe()
    }

    pub fn key_for(bundle: &PromptBundle, cfg: &ModelConfig) -> CacheKey {
        CacheKey::new(&cfg.model_name, cfg.temperature, cfg.max_tokens, &bundle.messages)
    }

    /// Returns the cached completion when present; otherwise invokes the
    /// backend and stores a successful result.
    pub fn complete(&self, bundle: &PromptBundle, cfg: &ModelConfig) -> Result<RawCompletion, BackendError> {
        cfg.validate()?;
        let key = Self::key_for(bundle, cfg);
        if let Some(cache) = &self.cache {
            if let Some(mut hit) = cache.get(&key) {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                hit.cached = true;
                return Ok(hit);
            }
        }
        self.backend_calls.fetch_add(1, Ordering::SeqCst);
        let completion = self.backend.send(&bundle.messages, cfg)?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &completion)?;
        }
        Ok(completion)
    }

    /// Backend invocations (cache misses) so far.
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::domain::{Strategy, StrategyKnobs};


    fn bundle(text: &str) -> PromptBundle {
        PromptBundle {
            strategy: Strategy::Direct,
            messages: vec![ChatMessage::user(text)],
            knobs: StrategyKnobs::default(),
        }
    }

    #[test]
    fn scripted_echo_then_cache_hit() {
        let dir = tempfile::tempdir().unwrap();
        let mock = Arc::new(mock_program(vec![MockRule::new(Matcher::any(), "The answer is True.")]).unwrap());
        let client = CompletionClient::new(Box::new(mock.clone()), Some(DiskCache::open(dir.path()).unwrap()));
        let cfg = ModelConfig::new("mock-model", "http://unused");

        let first = client.complete(&bundle("q"), &cfg).unwrap();
        assert_eq!(first.text, "The answer is True.");
        assert!(!first.cached);
        let second = client.complete(&bundle("q"), &cfg).unwrap();
        assert_eq!(second.text, first.text);
        assert!(second.cached);
        assert_eq!(mock.invocations(), 1);
        assert_eq!(client.backend_calls(), 1);
        assert_eq!(client.cache_hits(), 1);

        let third = client.complete(&bundle("r"), &cfg).unwrap();
        assert!(!third.cached);
        assert_eq!(mock.invocations(), 2);
    }

    #[test]
    fn replay_misses_are_errors() {
        let client = CompletionClient::new(Box::new(ReplayBackend), None);
        let err = client
            .complete(&bundle("q"), &ModelConfig::new("m", "http://unused"))
            .unwrap_err();
        assert!(matches!(err, BackendError::ReplayMiss(_)));
    }

    #[test]
    fn invalid_temperature_rejected() {
        let client = CompletionClient::new(Box::new(ReplayBackend), None);
        let mut cfg = ModelConfig::new("m", "http://unused");
        cfg.temperature = f64::NAN;
        assert!(matches!(client.complete(&bundle("q"), &cfg), Err(BackendError::Config(_))));
    }
}
