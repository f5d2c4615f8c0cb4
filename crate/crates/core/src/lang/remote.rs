//! Generic chat-completion HTTP backend.
//!
//! Request: `POST <endpoint>` with
//! `{"model": ..., "messages": [{"role": "user", "content": <prompt>}]}`
//! and a bearer token read from the environment variable named in config.
//! Response: `choices[0].message.content`, plus `usage.prompt_tokens` and
//! `usage.completion_tokens` when the server reports them.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Generation, GenerationRequest, LangError, LanguageProvider};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteChatConfig {
    pub endpoint: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_context_limit")]
    pub context_limit: u64,
}

fn default_model() -> String {
    "gpt-3.5-turbo".into()
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    2
}

fn default_context_limit() -> u64 {
    4096
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: String,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

pub struct RemoteChatProvider {
    config: RemoteChatConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl RemoteChatProvider {
    pub fn new(config: RemoteChatConfig) -> Self {
        let api_key = config.api_key_env.as_ref().and_then(|var| std::env::var(var).ok());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(true)
            .build()
            .into();
        Self { config, api_key, agent }
    }

    fn request(&self, prompt: &str) -> Result<Generation, LangError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
        };
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = req.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => LangError::Timeout(Duration::from_millis(self.config.timeout_ms)),
            other => LangError::Unavailable(other.to_string()),
        })?;
        let parsed: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| LangError::Unavailable(format!("bad chat response: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LangError::Unavailable("chat response has no choices".into()))?;
        Ok(Generation {
            text: choice.message.content,
            prompt_tokens: parsed.usage.as_ref().map(|u| u.prompt_tokens),
            completion_tokens: parsed.usage.as_ref().map(|u| u.completion_tokens),
        })
    }
}

impl LanguageProvider for RemoteChatProvider {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn context_limit(&self) -> u64 {
        self.config.context_limit
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation, LangError> {
        let mut last = LangError::Unavailable("no attempt made".into());
        for attempt in 0..=self.config.retries {
            match self.request(request.rendered) {
                Ok(g) => return Ok(g),
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "chat completion failed");
                    last = e;
                }
            }
        }
        Err(last)
    }
}
