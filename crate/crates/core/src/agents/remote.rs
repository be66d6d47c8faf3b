//! HTTP transport for OpenAI-compatible chat-completions services.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;

use super::llm::{ChatRequest, ChatTransport, ExchangeKey};
use super::BackendError;

#[derive(Debug)]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    api_key: String,
    min_interval: Duration,
    last_request: Mutex<Option<Instant>>,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Reply,
}

#[derive(Deserialize)]
struct Reply {
    #[serde(default)]
    content: Option<String>,
}

impl HttpTransport {
    /// `endpoint` is the API base (for example `https://api.openai.com/v1`);
    /// requests go to `{endpoint}/chat/completions`.
    pub fn new(
        endpoint: &str,
        api_key: String,
        timeout: Duration,
        min_interval: Duration,
    ) -> Result<Self, BackendError> {
        if endpoint.trim().is_empty() {
            return Err(BackendError::Config("remote backend needs an endpoint".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            api_key,
            min_interval,
            last_request: Mutex::new(None),
        })
    }

    fn pace(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let mut last = self.last_request.lock().expect("rate limiter lock");
        if let Some(prev) = *last {
            let next = prev + self.min_interval;
            let now = Instant::now();
            if next > now {
                std::thread::sleep(next - now);
            }
        }
        *last = Some(Instant::now());
    }
}

impl ChatTransport for HttpTransport {
    fn send(&self, key: &ExchangeKey, request: &ChatRequest) -> Result<String, BackendError> {
        self.pace();
        tracing::debug!(%key, url = %self.url, "chat completion request");
        let response = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(request)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        let body = response.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Transport(format!("HTTP {status}: {body}")));
        }
        let parsed: Completion = serde_json::from_str(&body).map_err(|e| BackendError::Malformed {
            raw: body.clone(),
            message: e.to_string(),
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Malformed {
                raw: body,
                message: "completion has no message content".into(),
            })
    }
}
