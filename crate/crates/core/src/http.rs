//! Blocking JSON-over-HTTP POST with bounded retries, shared by the remote
//! encoder and the remote chat transport.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::TransportError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpEndpointConfig {
    pub url: String,
    /// Environment variable holding a bearer token; unset means no auth header.
    pub token_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for HttpEndpointConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            token_env: None,
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

pub struct JsonPoster {
    config: HttpEndpointConfig,
    agent: ureq::Agent,
}

impl JsonPoster {
    pub fn new(config: HttpEndpointConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(
                config.timeout_secs.max(0.001),
            )))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &HttpEndpointConfig {
        &self.config
    }

    fn post_once(&self, body: &str) -> Result<Value, TransportError> {
        let mut request = self
            .agent
            .post(&self.config.url)
            .header("Content-Type", "application/json");
        if let Some(var) = &self.config.token_env {
            if let Ok(token) = std::env::var(var) {
                request = request.header("Authorization", &format!("Bearer {token}"));
            }
        }
        let response = request.send(body).map_err(classify)?;
        let status = response.status().as_u16();
        let text = response
            .into_body()
            .read_to_string()
            .map_err(|e| TransportError::Transient(format!("reading response body: {e}")))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| TransportError::Fatal(format!("response is not JSON: {e}"))),
            408 | 429 | 500..=599 => Err(TransportError::Transient(format!("HTTP {status}"))),
            _ => Err(TransportError::Fatal(format!("HTTP {status}: {text}"))),
        }
    }

    /// POSTs `body`, retrying transient failures up to `max_retries` times
    /// with exponential backoff (`backoff_ms * 2^attempt`).
    pub fn post(&self, body: &Value) -> Result<Value, TransportError> {
        let body = body.to_string();
        let mut attempt = 0u32;
        loop {
            match self.post_once(&body) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && attempt < self.config.max_retries => {
                    let delay = self.config.backoff_ms.saturating_mul(1 << attempt.min(16));
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                Err(e) if e.is_transient() => {
                    return Err(TransportError::Exhausted {
                        attempts: attempt + 1,
                        last: e.to_string(),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn classify(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound
        | ureq::Error::Protocol(_) => TransportError::Transient(e.to_string()),
        other => TransportError::Fatal(other.to_string()),
    }
}
