//! Bounded retry with deterministic exponential backoff.

use std::time::Duration;

use super::{Backend, CompletionRequest, CompletionResult, LlmError};

/// Retry budget and backoff shape.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    /// Total attempts, including the first (default 5).
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(200),
            max_delay: Duration::from_secs(10),
        }
    }
}

impl RetryPolicy {
    /// Delay before the attempt numbered `next_attempt` (2-based: there is
    /// no delay before the first attempt). No jitter, so runs are
    /// reproducible.
    fn delay_before(&self, next_attempt: u32) -> Duration {
        let exp = next_attempt.saturating_sub(2).min(16);
        let delay = self.base_delay.saturating_mul(1u32 << exp);
        delay.min(self.max_delay)
    }
}

/// Retries transient failures; an empty response gets exactly one retry
/// before surfacing as [`LlmError::EmptyResponse`].
pub struct Retrying<B> {
    inner: B,
    policy: RetryPolicy,
}

impl<B: Backend> Retrying<B> {
    pub fn new(inner: B, policy: RetryPolicy) -> Self {
        Retrying { inner, policy }
    }
}

impl<B: Backend> Backend for Retrying<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let mut attempts = 0u32;
        let mut empty_retried = false;
        loop {
            attempts += 1;
            match self.inner.complete(request) {
                Ok(result) if result.text.is_empty() => {
                    if empty_retried {
                        return Err(LlmError::EmptyResponse);
                    }
                    empty_retried = true;
                    log::warn!("empty response for tag {}, retrying once", request.tag);
                    std::thread::sleep(self.policy.base_delay);
                }
                Ok(mut result) => {
                    result.attempts = attempts;
                    return Ok(result);
                }
                Err(e) if e.is_transient() && attempts < self.policy.max_attempts => {
                    let delay = self.policy.delay_before(attempts + 1);
                    log::warn!(
                        "transient failure for tag {} (attempt {attempts}): {e}; retrying in {delay:?}",
                        request.tag
                    );
                    std::thread::sleep(delay);
                }
                Err(e) if e.is_transient() => {
                    return Err(LlmError::ProviderExhausted {
                        attempts,
                        last_error: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }
}
