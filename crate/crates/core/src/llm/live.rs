use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::transport::{LlmRequest, Role, Transport, TransportError};

pub const DEFAULT_ATTEMPTS: u32 = 3;

/// Client for an OpenAI-compatible chat completions endpoint.
pub struct LiveTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: String,
    attempts: u32,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

impl LiveTransport {
    /// Reads the API key from the environment variable `credential_env`.
    pub fn from_env(endpoint: &str, model: &str, credential_env: &str) -> Result<Self, TransportError> {
        let api_key = std::env::var(credential_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| TransportError::MissingCredential(credential_env.to_string()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| TransportError::Http {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            client,
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            attempts: DEFAULT_ATTEMPTS,
        })
    }

    fn attempt(&self, request: &LlmRequest<'_>) -> Result<String, String> {
        let messages: Vec<_> = request
            .history
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                json!({"role": role, "content": m.content})
            })
            .collect();
        let body = json!({"model": self.model, "messages": messages, "temperature": 0});
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| e.to_string())?;
        let status = response.status();
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(format!("HTTP {status}: {}", text.chars().take(500).collect::<String>()));
        }
        let completion: Completion = response.json().map_err(|e| e.to_string())?;
        completion
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| "response has no message content".to_string())
    }
}

impl Transport for LiveTransport {
    fn send(&mut self, request: &LlmRequest<'_>) -> Result<String, TransportError> {
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    tracing::warn!(attempt, stage = %request.stage, "LLM request failed: {e}");
                    last = e;
                    if attempt < self.attempts {
                        thread::sleep(Duration::from_secs(1 << (attempt - 1)));
                    }
                }
            }
        }
        Err(TransportError::Http {
            attempts: self.attempts,
            message: last,
        })
    }
}
