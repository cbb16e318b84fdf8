//! Live backend speaking the OpenAI-compatible chat-completions protocol.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, CompletionRequest, CompletionResult, LlmError};

/// Connection settings for a chat-completions endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    /// Base URL up to but not including `/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "POT_API_KEY".into(),
            timeout_secs: 120,
        }
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    seed: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Synchronous HTTP client for one endpoint. Compose under [`Retrying`],
/// [`ContextLimited`], and [`CachedBackend`] for production use.
///
/// [`Retrying`]: super::Retrying
/// [`ContextLimited`]: super::ContextLimited
/// [`CachedBackend`]: super::CachedBackend
pub struct LiveHttpBackend {
    config: HttpBackendConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl LiveHttpBackend {
    /// Reads the API key from the configured environment variable.
    pub fn new(config: HttpBackendConfig) -> Result<Self, LlmError> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| LlmError::MissingApiKey(config.api_key_env.clone()))?;
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build();
        Ok(LiveHttpBackend {
            config,
            api_key,
            agent: agent_config.into(),
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

impl Backend for LiveHttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let body = WireRequest {
            model: &self.config.model,
            messages: request
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: match m.role {
                        super::Role::System => "system",
                        super::Role::User => "user",
                        super::Role::Assistant => "assistant",
                    },
                    content: &m.content,
                })
                .collect(),
            temperature: request.sampling.temperature,
            top_p: request.sampling.nucleus_p,
            max_tokens: request.sampling.max_output_tokens,
            seed: request.sampling.seed,
        };
        let mut response = self
            .agent
            .post(&self.endpoint())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(LlmError::HttpStatus { status, body: text });
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        Ok(CompletionResult::fresh(content))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_missing_api_key() {
        let config = HttpBackendConfig {
            api_key_env: "POT_TEST_KEY_THAT_DOES_NOT_EXIST".into(),
            ..HttpBackendConfig::default()
        };
        assert!(matches!(
            LiveHttpBackend::new(config),
            Err(LlmError::MissingApiKey(var)) if var == "POT_TEST_KEY_THAT_DOES_NOT_EXIST"
        ));
    }

    #[test]
    fn test_endpoint_join() {
        std::env::set_var("POT_TEST_KEY_PRESENT", "sk-test");
        let backend = LiveHttpBackend::new(HttpBackendConfig {
            base_url: "http://localhost:9/v1/".into(),
            api_key_env: "POT_TEST_KEY_PRESENT".into(),
            ..HttpBackendConfig::default()
        })
        .unwrap();
        assert_eq!(backend.endpoint(), "http://localhost:9/v1/chat/completions");
    }

    #[test]
    fn test_wire_request_shape() {
        let body = WireRequest {
            model: "m",
            messages: vec![WireMessage { role: "user", content: "hi" }],
            temperature: 0.1,
            top_p: 0.95,
            max_tokens: 64,
            seed: 7,
        };
        let value = serde_json::to_value(&body).unwrap();
        assert_eq!(value["messages"][0]["role"], "user");
        assert_eq!(value["max_tokens"], 64);
        assert_eq!(value["seed"], 7);
    }

    #[test]
    fn test_wire_response_parse() {
        let raw = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#;
        let parsed: WireResponse = serde_json::from_str(raw).unwrap();
        assert_eq!(parsed.choices[0].message.content.as_deref(), Some("hello"));
        let empty = r#"{"choices":[{"message":{"role":"assistant","content":null}}]}"#;
        let parsed: WireResponse = serde_json::from_str(empty).unwrap();
        assert_eq!(parsed.choices[0].message.content, None);
    }
}
