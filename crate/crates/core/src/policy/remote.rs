//! Chat-completions client. One user message per call; the API key is read
//! from an environment variable named in the endpoint descriptor.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Completer, DecodeParams, PolicyError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteEndpoint {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_max_concurrent() -> usize {
    4
}
fn default_max_retries() -> u32 {
    3
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_backoff_ms() -> u64 {
    500
}

impl RemoteEndpoint {
    pub fn new(base_url: &str, model: &str) -> Self {
        RemoteEndpoint {
            base_url: base_url.to_string(),
            model: model.to_string(),
            api_key_env: None,
            max_concurrent: default_max_concurrent(),
            max_retries: default_max_retries(),
            timeout_secs: default_timeout_secs(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("remote call failed after {attempts} attempt(s){}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
pub struct RemoteError {
    pub message: String,
    pub status: Option<u16>,
    pub attempts: u32,
    /// Whether the final failure was of a kind that is normally transient.
    pub retryable: bool,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
    seed: u64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    max: usize,
    inflight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.inflight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.inflight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteBackend {
    endpoint: RemoteEndpoint,
    url: String,
    client: reqwest::blocking::Client,
    gate: Gate,
}

enum Attempt {
    Done(String),
    Retry(RemoteError),
    Fatal(RemoteError),
}

impl RemoteBackend {
    pub fn new(endpoint: RemoteEndpoint) -> Result<Self, PolicyError> {
        if endpoint.max_concurrent == 0 {
            return Err(PolicyError::Config("remote max_concurrent must be positive".into()));
        }
        if !(endpoint.base_url.starts_with("http://") || endpoint.base_url.starts_with("https://")) {
            return Err(PolicyError::Config(format!("remote base_url `{}` is not an http(s) URL", endpoint.base_url)));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| PolicyError::Config(format!("cannot build HTTP client: {e}")))?;
        let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
        let gate = Gate { max: endpoint.max_concurrent, inflight: Mutex::new(0), freed: Condvar::new() };
        Ok(RemoteBackend { endpoint, url, client, gate })
    }

    fn attempt(&self, body: &ChatRequest<'_>, api_key: Option<&str>, n: u32) -> Attempt {
        let err = |message: String, status: Option<u16>, retryable: bool| RemoteError {
            message,
            status,
            attempts: n,
            retryable,
        };
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(err(format!("transport error: {e}"), None, true)),
        };
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(err(format!("server answered {status}"), Some(status.as_u16()), true));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Attempt::Fatal(err(
                format!("server answered {status}: {}", text.trim()),
                Some(status.as_u16()),
                false,
            ));
        }
        match resp.json::<ChatResponse>() {
            Ok(parsed) => match parsed.choices.into_iter().next().and_then(|c| c.message.content) {
                Some(content) => Attempt::Done(content),
                None => Attempt::Fatal(err("response has no message content".into(), Some(status.as_u16()), false)),
            },
            Err(e) => Attempt::Fatal(err(format!("malformed response body: {e}"), Some(status.as_u16()), false)),
        }
    }
}

impl Completer for RemoteBackend {
    fn complete(&self, prompt: &str, decode: &DecodeParams, seed: u64) -> Result<String, PolicyError> {
        let api_key = match &self.endpoint.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                PolicyError::Config(format!("environment variable `{var}` holding the API key is not set"))
            })?),
            None => None,
        };
        let body = ChatRequest {
            model: &self.endpoint.model,
            messages: [ChatMessage { role: "user", content: prompt }],
            temperature: decode.temperature,
            max_tokens: decode.max_output_tokens,
            seed,
        };
        let _permit = self.gate.acquire();
        let total = self.endpoint.max_retries + 1;
        let mut n = 1;
        loop {
            match self.attempt(&body, api_key.as_deref(), n) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e.into()),
                Attempt::Retry(e) if n >= total => return Err(e.into()),
                Attempt::Retry(e) => {
                    log::warn!("{} (attempt {n}/{total}), retrying", e.message);
                    let wait = self.endpoint.backoff_ms.saturating_mul(1 << (n - 1).min(10));
                    thread::sleep(Duration::from_millis(wait));
                    n += 1;
                }
            }
        }
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}
