use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use super::{truncate_chars, BackendError, TextGenerator};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model_name: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env_var: Option<String>,
    /// Base delay of the exponential backoff between retries.
    pub backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".to_string(),
            model_name: "qwen2.5-7b-instruct".to_string(),
            timeout_ms: 60_000,
            max_retries: 3,
            api_key_env_var: None,
            backoff_ms: 500,
        }
    }
}

/// Chat-completion client with a timeout and bounded, jittered retries.
pub struct RemoteGenerator {
    config: EndpointConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

enum Attempt {
    Done(String),
    Retry(BackendError),
    Fatal(BackendError),
}

impl RemoteGenerator {
    pub fn new(config: EndpointConfig) -> Self {
        let api_key = config
            .api_key_env_var
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            agent,
            api_key,
        }
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self.agent.post(&self.url());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(classify_transport(e)),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(classify_transport(e)),
        };
        match status {
            200..=299 => match extract_content(&text) {
                Some(content) => Attempt::Done(content),
                None => Attempt::Fatal(BackendError::Protocol(format!(
                    "no choices[0].message.content in response: {}",
                    truncate_chars(&text, 200)
                ))),
            },
            401 | 403 => Attempt::Fatal(BackendError::Auth { status }),
            429 | 500..=599 => Attempt::Retry(BackendError::Transport(format!("HTTP {status}"))),
            _ => Attempt::Fatal(BackendError::Protocol(format!(
                "HTTP {status}: {}",
                truncate_chars(&text, 200)
            ))),
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.config.backoff_ms.saturating_mul(1 << attempt.min(16)) as f64;
        let jitter: f64 = rand::rng().random_range(0.5..1.5);
        Duration::from_millis((base * jitter) as u64)
    }
}

fn classify_transport(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(t) => BackendError::Timeout(t.to_string()),
        other => BackendError::Transport(other.to_string()),
    }
}

fn extract_content(body: &str) -> Option<String> {
    let v: Value = serde_json::from_str(body).ok()?;
    v.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

impl TextGenerator for RemoteGenerator {
    fn generate(&self, prompt: &str, max_length: usize) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            // rough token allowance for a character budget
            "max_tokens": max_length.div_ceil(2).max(16),
            "temperature": 0.0,
        });
        let mut last = BackendError::Transport("no attempt made".to_string());
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            match self.attempt(&body) {
                Attempt::Done(text) => return Ok(truncate_chars(&text, max_length)),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => {
                    warn!(attempt, error = %e, "remote generator call failed");
                    last = e;
                }
            }
        }
        Err(last)
    }

    fn identity(&self) -> String {
        format!("remote:{}@{}", self.config.model_name, self.config.base_url)
    }
}
