//! Deterministic in-memory backends for tests and cache-only replays.

use std::collections::VecDeque;
use std::sync::Mutex;

use super::{Backend, CompletionRequest, CompletionResult, LlmError};

/// Replays canned responses.
///
/// Responses live in FIFO queues keyed by a tag prefix; a request consumes
/// the front of the queue whose key is the *longest* prefix of the request's
/// tag. A single empty-string key therefore acts as a global queue consumed
/// in request order. Every request is recorded for inspection.
pub struct ScriptedBackend {
    state: Mutex<ScriptState>,
}

struct ScriptState {
    queues: Vec<(String, VecDeque<String>)>,
    requests: Vec<CompletionRequest>,
    calls: usize,
}

impl ScriptedBackend {
    /// One global queue consumed strictly in request order.
    pub fn global<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedBackend::keyed([("", responses)])
    }

    /// Tag-prefix-keyed queues; see the type docs for matching rules.
    pub fn keyed<K, I, S>(scripts: impl IntoIterator<Item = (K, I)>) -> Self
    where
        K: Into<String>,
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let queues = scripts
            .into_iter()
            .map(|(key, responses)| {
                (
                    key.into(),
                    responses.into_iter().map(Into::into).collect::<VecDeque<_>>(),
                )
            })
            .collect();
        ScriptedBackend {
            state: Mutex::new(ScriptState {
                queues,
                requests: Vec::new(),
                calls: 0,
            }),
        }
    }

    /// Total completed calls so far (including ones that errored).
    pub fn calls(&self) -> usize {
        self.state.lock().unwrap().calls
    }

    /// Copies of every request seen, in arrival order.
    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.state.lock().unwrap().requests.clone()
    }

    /// Responses not yet consumed, across all queues.
    pub fn remaining(&self) -> usize {
        self.state
            .lock()
            .unwrap()
            .queues
            .iter()
            .map(|(_, q)| q.len())
            .sum()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let mut state = self.state.lock().unwrap();
        state.calls += 1;
        state.requests.push(request.clone());
        let best = state
            .queues
            .iter_mut()
            .filter(|(key, queue)| request.tag.starts_with(key.as_str()) && !queue.is_empty())
            .max_by_key(|(key, _)| key.len());
        match best.and_then(|(_, queue)| queue.pop_front()) {
            Some(text) => Ok(CompletionResult::fresh(text)),
            None => Err(LlmError::ScriptExhausted {
                tag: request.tag.clone(),
            }),
        }
    }
}

/// Refuses every request; compose under a cache for cache-only replays.
pub struct OfflineBackend;

impl Backend for OfflineBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        Err(LlmError::LiveDisabled {
            tag: request.tag.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SamplingParams;

    fn req(tag: &str) -> CompletionRequest {
        CompletionRequest::user("hi", SamplingParams::base(), tag)
    }

    #[test]
    fn test_global_queue_consumes_in_order() {
        let backend = ScriptedBackend::global(["first", "second"]);
        assert_eq!(backend.complete(&req("a")).unwrap().text, "first");
        assert_eq!(backend.complete(&req("b")).unwrap().text, "second");
        assert!(matches!(
            backend.complete(&req("c")),
            Err(LlmError::ScriptExhausted { tag }) if tag == "c"
        ));
        assert_eq!(backend.calls(), 3);
        assert_eq!(backend.requests().len(), 3);
    }

    #[test]
    fn test_longest_prefix_wins() {
        let backend = ScriptedBackend::keyed([
            ("q1/pw0", vec!["pw0 reply"]),
            ("q1", vec!["generic reply"]),
        ]);
        assert_eq!(backend.complete(&req("q1/pw0/select")).unwrap().text, "pw0 reply");
        assert_eq!(backend.complete(&req("q1/prefs")).unwrap().text, "generic reply");
    }

    #[test]
    fn test_exhausted_queue_falls_back_to_shorter_prefix() {
        let backend = ScriptedBackend::keyed([
            ("q1/pw0", vec!["only one"]),
            ("", vec!["fallback"]),
        ]);
        assert_eq!(backend.complete(&req("q1/pw0/x")).unwrap().text, "only one");
        assert_eq!(backend.complete(&req("q1/pw0/y")).unwrap().text, "fallback");
    }

    #[test]
    fn test_offline_backend_always_fails() {
        let backend = OfflineBackend;
        assert!(matches!(
            backend.complete(&req("any")),
            Err(LlmError::LiveDisabled { tag }) if tag == "any"
        ));
    }
}
