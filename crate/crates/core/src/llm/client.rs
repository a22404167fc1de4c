//! Chat-completion transport. The trait keeps grading code independent
//! of any particular endpoint; the HTTP implementation speaks the
//! common chat-completions JSON shape.

use super::LlmError;
use serde::Deserialize;
use serde_json::json;
use std::time::Duration;

/// One completion call. `temperature` is always 0 in this pipeline.
#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub temperature: f64,
}

pub trait ChatCompletionClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, LlmError>;
}

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-4o";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_RETRIES: u32 = 2;

/// HTTP client for chat-completion endpoints. The credential is held in
/// memory only and never appears in errors or logs.
pub struct HttpChatClient {
    endpoint: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(endpoint: &str, api_key: Option<String>) -> Result<Self, LlmError> {
        Self::with_timeout(endpoint, api_key, DEFAULT_TIMEOUT, DEFAULT_MAX_RETRIES)
    }

    pub fn with_timeout(
        endpoint: &str,
        api_key: Option<String>,
        timeout: Duration,
        max_retries: u32,
    ) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(HttpChatClient {
            endpoint: endpoint.to_string(),
            api_key,
            max_retries,
            backoff: Duration::from_millis(250),
            http,
        })
    }

    fn call_once(&self, request: &CompletionRequest<'_>) -> Result<String, LlmError> {
        let body = json!({
            "model": request.model,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let mut http_request = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            http_request = http_request.bearer_auth(key);
        }
        let response = http_request
            .send()
            .map_err(|e| LlmError::Transport(e.without_url().to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(LlmError::Http(status.as_u16()));
        }
        let parsed: CompletionResponse = response
            .json()
            .map_err(|e| LlmError::Transport(e.without_url().to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::Transport("completion had no choices".to_string()))
    }
}

impl ChatCompletionClient for HttpChatClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, LlmError> {
        let mut delay = self.backoff;
        let mut last_error = None;
        for attempt in 0..=self.max_retries {
            match self.call_once(request) {
                Ok(content) => return Ok(content),
                Err(e) => last_error = Some(e),
            }
            if attempt < self.max_retries {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(last_error.unwrap_or_else(|| LlmError::Transport("no attempts made".to_string())))
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}
