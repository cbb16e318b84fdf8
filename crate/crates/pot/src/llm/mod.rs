//! Chat-completion backend abstraction: a synchronous [`Backend`] trait plus
//! composable decorators for caching, retries, and context-limit checks.

mod cache;
mod http;
mod retry;
mod scripted;

pub use cache::{CachedBackend, ResponseCache};
pub use http::{HttpBackendConfig, LiveHttpBackend};
pub use retry::{Retrying, RetryPolicy};
pub use scripted::{OfflineBackend, ScriptedBackend};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::SamplingParams;

/// Role of one chat message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One chat message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// A single completion request.
///
/// `tag` identifies the request's purpose (e.g. `q1/pw0/select`) for logging
/// and scripted routing; it never influences the response or the cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<Message>,
    pub sampling: SamplingParams,
    pub tag: String,
}

impl CompletionRequest {
    /// Single-user-message request, the common case.
    pub fn user(content: impl Into<String>, sampling: SamplingParams, tag: impl Into<String>) -> Self {
        CompletionRequest {
            messages: vec![Message::user(content)],
            sampling,
            tag: tag.into(),
        }
    }
}

/// Completion text plus bookkeeping about how it was obtained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionResult {
    pub text: String,
    /// True when the text came from the response cache.
    pub cached: bool,
    /// Provider attempts made for this result (at least 1).
    pub attempts: u32,
}

impl CompletionResult {
    pub fn fresh(text: impl Into<String>) -> Self {
        CompletionResult {
            text: text.into(),
            cached: false,
            attempts: 1,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("request of ~{estimated} tokens exceeds the context limit of {limit}")]
    ContextOverflow { estimated: usize, limit: usize },
    #[error("provider failed after {attempts} attempts: {last_error}")]
    ProviderExhausted { attempts: u32, last_error: String },
    #[error("provider returned an empty response")]
    EmptyResponse,
    #[error("scripted backend has no response for tag `{tag}`")]
    ScriptExhausted { tag: String },
    #[error("live calls are disabled and no cached response exists for tag `{tag}`")]
    LiveDisabled { tag: String },
    #[error("http transport: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("missing API key: set the {0} environment variable")]
    MissingApiKey(String),
    #[error("cache file {path}: {source}")]
    CacheIo {
        path: String,
        source: std::io::Error,
    },
    #[error("cache file {path} line {line} is malformed")]
    MalformedCache { path: String, line: usize },
}

impl LlmError {
    /// Whether retrying the same request could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::HttpStatus { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A synchronous chat-completion backend.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        (**self).complete(request)
    }
}

/// Content-addressed cache key over everything that determines a response:
/// messages (roles and contents, in order) and sampling parameters. The tag
/// is deliberately excluded.
pub fn cache_key(request: &CompletionRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update((request.messages.len() as u64).to_le_bytes());
    for message in &request.messages {
        let role = match message.role {
            Role::System => 0u8,
            Role::User => 1,
            Role::Assistant => 2,
        };
        hasher.update([role]);
        hasher.update((message.content.len() as u64).to_le_bytes());
        hasher.update(message.content.as_bytes());
    }
    hasher.update(request.sampling.temperature.to_bits().to_le_bytes());
    hasher.update(request.sampling.nucleus_p.to_bits().to_le_bytes());
    hasher.update(request.sampling.max_output_tokens.to_le_bytes());
    hasher.update(request.sampling.seed.to_le_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write as _;
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

/// Default model context window, in tokens.
pub const DEFAULT_CONTEXT_LIMIT: usize = 32768;

/// Estimates how many tokens a request will occupy.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, request: &CompletionRequest) -> usize;
}

/// Crude but dependency-free estimator: N characters per token.
#[derive(Debug, Clone, Copy)]
pub struct CharsPerToken(pub f64);

impl Default for CharsPerToken {
    fn default() -> Self {
        CharsPerToken(4.0)
    }
}

impl TokenEstimator for CharsPerToken {
    fn estimate(&self, request: &CompletionRequest) -> usize {
        let chars: usize = request.messages.iter().map(|m| m.content.chars().count()).sum();
        (chars as f64 / self.0).ceil() as usize
    }
}

/// Rejects requests whose estimated size (plus a 10% safety margin and the
/// requested output budget) exceeds the context limit.
pub struct ContextLimited<B> {
    inner: B,
    limit: usize,
    estimator: Box<dyn TokenEstimator>,
}

impl<B: Backend> ContextLimited<B> {
    pub fn new(inner: B, limit: usize) -> Self {
        ContextLimited {
            inner,
            limit,
            estimator: Box::new(CharsPerToken::default()),
        }
    }

    pub fn with_estimator(inner: B, limit: usize, estimator: Box<dyn TokenEstimator>) -> Self {
        ContextLimited {
            inner,
            limit,
            estimator,
        }
    }
}

impl<B: Backend> Backend for ContextLimited<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let input = self.estimator.estimate(request);
        let padded = (input as f64 * 1.1).ceil() as usize
            + request.sampling.max_output_tokens as usize;
        if padded > self.limit {
            return Err(LlmError::ContextOverflow {
                estimated: padded,
                limit: self.limit,
            });
        }
        self.inner.complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(text: &str, sampling: SamplingParams, tag: &str) -> CompletionRequest {
        CompletionRequest::user(text, sampling, tag)
    }

    #[test]
    fn test_cache_key_identical_requests() {
        let a = request("hello", SamplingParams::base().with_seed(3), "one");
        let b = request("hello", SamplingParams::base().with_seed(3), "two");
        // tags differ, keys must not
        assert_eq!(cache_key(&a), cache_key(&b));
    }

    #[test]
    fn test_cache_key_sensitive_to_sampling_and_content() {
        let base = request("hello", SamplingParams::base(), "t");
        let hotter = request("hello", SamplingParams::base().with_temperature(0.9), "t");
        let other_text = request("hellp", SamplingParams::base(), "t");
        let other_seed = request("hello", SamplingParams::base().with_seed(1), "t");
        assert_ne!(cache_key(&base), cache_key(&hotter));
        assert_ne!(cache_key(&base), cache_key(&other_text));
        assert_ne!(cache_key(&base), cache_key(&other_seed));
    }

    #[test]
    fn test_cache_key_sensitive_to_message_order() {
        let ab = CompletionRequest {
            messages: vec![Message::system("a"), Message::user("b")],
            sampling: SamplingParams::base(),
            tag: "t".into(),
        };
        let ba = CompletionRequest {
            messages: vec![Message::system("b"), Message::user("a")],
            sampling: SamplingParams::base(),
            tag: "t".into(),
        };
        assert_ne!(cache_key(&ab), cache_key(&ba));
    }

    #[test]
    fn test_context_limited_rejects_oversized() {
        let scripted = ScriptedBackend::global(["ok"]);
        let limited = ContextLimited::new(scripted, 1000);
        let mut sampling = SamplingParams::base();
        sampling.max_output_tokens = 10;
        // ~1250 estimated input tokens after margin, well past the limit
        let big = request(&"x".repeat(5000), sampling, "t");
        match limited.complete(&big) {
            Err(LlmError::ContextOverflow { estimated, limit }) => {
                assert_eq!(limit, 1000);
                assert!(estimated > limit);
            }
            other => panic!("expected overflow, got {other:?}"),
        }
        // a small request passes through
        let small = request("hi", sampling, "t");
        assert_eq!(limited.complete(&small).unwrap().text, "ok");
    }

    #[test]
    fn test_context_limit_margin_applied() {
        // 36000 chars / 4 = 9000 tokens; +10% = 9900; +100 output = 10000 > 9999
        let scripted = ScriptedBackend::global(["ok"]);
        let limited = ContextLimited::new(scripted, 9999);
        let mut sampling = SamplingParams::base();
        sampling.max_output_tokens = 100;
        let req = request(&"y".repeat(36000), sampling, "t");
        assert!(matches!(
            limited.complete(&req),
            Err(LlmError::ContextOverflow { .. })
        ));
    }

    #[test]
    fn test_transient_classification() {
        assert!(LlmError::Transport("reset".into()).is_transient());
        assert!(LlmError::HttpStatus { status: 429, body: String::new() }.is_transient());
        assert!(LlmError::HttpStatus { status: 503, body: String::new() }.is_transient());
        assert!(!LlmError::HttpStatus { status: 401, body: String::new() }.is_transient());
        assert!(!LlmError::EmptyResponse.is_transient());
        assert!(!LlmError::ContextOverflow { estimated: 1, limit: 0 }.is_transient());
    }
}
