use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CompletionRequest, CompletionResponse, Provider, ProviderError};

/// The only channel for the live credential.
pub const API_KEY_ENV: &str = "EVOSIM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    /// Full chat-completions URL, e.g. `https://api.openai.com/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Forwarded as the `seed` request field when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_timeout_secs() -> u64 {
    60
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self { endpoint: endpoint.into(), model: model.into(), timeout_secs: 60, seed: None }
    }
}

/// OpenAI-compatible chat-completions client: one system message (omitted
/// when empty) and one user message per request.
pub struct HttpProvider {
    config: HttpConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider").field("config", &self.config).finish_non_exhaustive()
    }
}

impl HttpProvider {
    pub fn new(config: HttpConfig, api_key: impl Into<String>) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self { config, api_key: api_key.into(), client })
    }

    /// Reads the key from `EVOSIM_API_KEY`.
    pub fn from_env(config: HttpConfig) -> Result<Self, ProviderError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| ProviderError::Config(format!("{API_KEY_ENV} is not set")))?;
        Self::new(config, key)
    }

    pub fn request_body(&self, req: &CompletionRequest) -> serde_json::Value {
        let mut messages = Vec::new();
        if !req.system_text.is_empty() {
            messages.push(json!({ "role": "system", "content": req.system_text }));
        }
        messages.push(json!({ "role": "user", "content": req.user_text }));
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(seed) = self.config.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        req.validate()?;
        let started = Instant::now();
        let resp =
            self.client
                .post(&self.config.endpoint)
                .bearer_auth(&self.api_key)
                .json(&self.request_body(req))
                .send()
                .map_err(|e| {
                    if e.is_timeout() {
                        ProviderError::Timeout
                    } else {
                        ProviderError::Transport(e.to_string())
                    }
                })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| ProviderError::Transport(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(ProviderError::Auth(format!("HTTP {status}"))),
            _ => return Err(ProviderError::Server { status, body }),
        }
        let reply: ChatReply = serde_json::from_str(&body).map_err(|e| ProviderError::Decode(e.to_string()))?;
        let text = reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| ProviderError::Decode("reply carries no text".into()))?;
        Ok(CompletionResponse {
            text,
            provider_name: self.config.model.clone(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}
