//! OpenAI-compatible chat-completion client with retry and optional
//! exchange recording.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::ratelimit::TokenBucket;
use super::GenError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// e.g. `https://api.example.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token. Unset means no auth header.
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    /// Total attempts per request, including the first.
    pub retry_cap: u32,
    pub backoff_ms: u64,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    /// Requests per second across all trees; only used with several trees.
    pub rate_limit_per_sec: f64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080/v1".into(),
            model: "default".into(),
            api_key_env: None,
            timeout_secs: 600.0,
            retry_cap: 5,
            backoff_ms: 500,
            temperature: Some(0.7),
            max_tokens: None,
            rate_limit_per_sec: 2.0,
        }
    }
}

impl EndpointConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            v.push(format!(
                "endpoint.base_url must be an http(s) URL, got {:?}",
                self.base_url
            ));
        }
        if self.model.trim().is_empty() {
            v.push("endpoint.model must be non-empty".into());
        }
        if self.retry_cap == 0 {
            v.push("endpoint.retry_cap must be at least 1".into());
        }
        if !(self.timeout_secs > 0.0) {
            v.push("endpoint.timeout_secs must be > 0".into());
        }
        if !(self.rate_limit_per_sec > 0.0) {
            v.push("endpoint.rate_limit_per_sec must be > 0".into());
        }
        v
    }
}

/// A successful completion and how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub content: String,
    pub attempts: u32,
    /// Request body as sent; credentials live only in headers and are never recorded.
    pub request: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RecordedResponse {
    pub status: u16,
    pub body: String,
}

/// One line of a recorded fixture.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Exchange {
    pub request: Value,
    pub response: RecordedResponse,
}

#[derive(Clone)]
pub struct ChatClient {
    config: EndpointConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    limiter: Option<Arc<TokenBucket>>,
    recorder: Option<Arc<Mutex<File>>>,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient")
            .field("base_url", &self.config.base_url)
            .field("model", &self.config.model)
            .finish_non_exhaustive()
    }
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(GenError),
}

impl ChatClient {
    pub fn new(config: EndpointConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .build()
            .into();
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        Self {
            config,
            agent,
            api_key,
            limiter: None,
            recorder: None,
        }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    pub fn with_rate_limit(mut self, bucket: Arc<TokenBucket>) -> Self {
        self.limiter = Some(bucket);
        self
    }

    /// Appends every exchange to `path` in fixture format.
    pub fn record_to(mut self, path: &Path) -> std::io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        self.recorder = Some(Arc::new(Mutex::new(f)));
        Ok(self)
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = self.config.max_tokens {
            body["max_tokens"] = json!(m);
        }
        body
    }

    pub fn complete(&self, prompt: &str) -> Result<Completion, GenError> {
        let request = self.request_body(prompt);
        let payload = request.to_string();
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let mut last = String::new();
        for attempt in 1..=self.config.retry_cap {
            if attempt > 1 {
                let factor = 1u64 << (attempt - 2).min(16);
                thread::sleep(Duration::from_millis(
                    self.config.backoff_ms.saturating_mul(factor),
                ));
            }
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            match self.attempt(&url, &payload, &request) {
                Attempt::Done(content) => {
                    return Ok(Completion {
                        content,
                        attempts: attempt,
                        request,
                    })
                }
                Attempt::Retry(why) => {
                    log::warn!("model call attempt {attempt} failed: {why}");
                    last = why;
                }
                Attempt::Fatal(e) => return Err(e),
            }
        }
        Err(GenError::DriverUnavailable {
            attempts: self.config.retry_cap,
            last,
        })
    }

    fn attempt(&self, url: &str, payload: &str, request: &Value) -> Attempt {
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send(payload) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("transport: {e}")),
        };
        let status = resp.status().as_u16();
        let body = match resp.body_mut().read_to_string() {
            Ok(b) => b,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        self.record(request, status, &body);
        match status {
            200..=299 => match parse_envelope(&body) {
                Ok(content) => Attempt::Done(content),
                Err(e) => Attempt::Fatal(e),
            },
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
            _ => Attempt::Fatal(GenError::DriverUnavailable {
                attempts: 1,
                last: format!(
                    "HTTP {status}: {}",
                    body.chars().take(200).collect::<String>()
                ),
            }),
        }
    }

    fn record(&self, request: &Value, status: u16, body: &str) {
        let Some(rec) = &self.recorder else { return };
        let line = serde_json::to_string(&Exchange {
            request: request.clone(),
            response: RecordedResponse {
                status,
                body: body.to_string(),
            },
        })
        .expect("exchange serializes");
        if let Err(e) = writeln!(rec.lock(), "{line}") {
            log::error!("failed to record exchange: {e}");
        }
    }
}

/// Content of the first choice of a chat-completion response.
pub fn parse_envelope(body: &str) -> Result<String, GenError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| GenError::DriverProtocolError(format!("response is not JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GenError::DriverProtocolError("missing choices[0].message.content".into()))
}

/// Response body a compatible server would send for `content`.
pub fn envelope(content: &str) -> String {
    json!({
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_round_trip() {
        assert_eq!(parse_envelope(&envelope("hi")).unwrap(), "hi");
        assert!(matches!(
            parse_envelope("{\"choices\": []}"),
            Err(GenError::DriverProtocolError(_))
        ));
        assert!(matches!(
            parse_envelope("<html>"),
            Err(GenError::DriverProtocolError(_))
        ));
    }

    #[test]
    fn request_body_has_no_credentials() {
        std::env::set_var("BUDGET_MCTS_TEST_KEY", "sk-secret");
        let client = ChatClient::new(EndpointConfig {
            api_key_env: Some("BUDGET_MCTS_TEST_KEY".into()),
            ..EndpointConfig::default()
        });
        let body = client.request_body("hello").to_string();
        assert!(!body.contains("sk-secret"));
        assert!(body.contains("hello"));
    }
}
