//! Chat-completion client for scoring prompts.
//!
//! [`HttpGateway`] talks to a chat-completion JSON endpoint with retries,
//! a concurrency cap and a rolling-window request ceiling. Every call yields
//! an [`ExchangeRecord`]; [`ReplayGateway`] answers from stored records or
//! canned fixtures without touching the network.

mod admission;
mod http;
pub mod mock;
mod record;
mod replay;

use std::time::Duration;

use ados_core::prompt::PromptBundle;
use serde::{Deserialize, Serialize};

pub use admission::{Admission, Permit};
pub use http::HttpGateway;
pub use record::{prompt_digest, AttemptLog, EndpointDescriptor, ExchangeRecord, ExchangeStore};
pub use replay::ReplayGateway;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("still rate limited after {attempts} attempt(s)")]
    RateLimitedExhausted { attempts: u32 },
    #[error("timed out on all {attempts} attempt(s)")]
    TimeoutExhausted { attempts: u32 },
    #[error("endpoint returned HTTP {status}: {excerpt}")]
    Protocol { status: u16, excerpt: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no stored exchange or fixture for request `{0}`")]
    ReplayMissing(String),
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("exchange store: {0}")]
    Store(String),
}

fn default_path() -> String {
    "/v1/chat/completions".into()
}
fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    3
}
fn default_concurrent() -> usize {
    4
}
fn default_rpm() -> u32 {
    60
}
fn default_backoff_base() -> u64 {
    500
}
fn default_backoff_max() -> u64 {
    30_000
}
fn default_window() -> u64 {
    60_000
}

/// Where and how to call the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEndpoint {
    pub base_url: String,
    #[serde(default = "default_path")]
    pub path: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrent")]
    pub max_concurrent: usize,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    #[serde(default = "default_backoff_base")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_max")]
    pub backoff_max_ms: u64,
    /// Length of the rate-limit window; one minute unless overridden.
    #[serde(default = "default_window")]
    pub rate_window_ms: u64,
    /// Extra top-level request fields passed through unchanged.
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl ModelEndpoint {
    pub fn new(base_url: &str, model_name: &str, api_key_env: &str) -> Self {
        ModelEndpoint {
            base_url: base_url.to_string(),
            path: default_path(),
            model_name: model_name.to_string(),
            api_key_env: api_key_env.to_string(),
            timeout_s: default_timeout(),
            max_retries: default_retries(),
            max_concurrent: default_concurrent(),
            requests_per_minute: default_rpm(),
            backoff_base_ms: default_backoff_base(),
            backoff_max_ms: default_backoff_max(),
            rate_window_ms: default_window(),
            extra: serde_json::Map::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidEndpoint(m.to_string()));
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return bad("timeout_s must be positive");
        }
        if self.max_concurrent == 0 {
            return bad("max_concurrent must be at least 1");
        }
        if self.requests_per_minute == 0 {
            return bad("requests_per_minute must be at least 1");
        }
        if self.rate_window_ms == 0 {
            return bad("rate_window_ms must be positive");
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad("base_url must be an http(s) URL");
        }
        for key in ["model", "messages"] {
            if self.extra.contains_key(key) {
                return bad("extra must not override `model` or `messages`");
            }
        }
        Ok(())
    }

    pub fn url(&self) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), self.path.trim_start_matches('/'))
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }

    /// Backoff before retry number `retry` (1-based), capped at `backoff_max_ms`.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }
}

/// Assistant text plus the exchange that produced it, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub record: Option<ExchangeRecord>,
}

/// Anything that can answer a prompt. Implementations are shared across workers.
pub trait CompletionBackend: Send + Sync {
    /// `request_id` names the exchange, conventionally `<session>__<purpose>`.
    fn complete(&self, request_id: &str, bundle: &PromptBundle) -> Result<Completion, GatewayError>;
}

/// `<session>__<purpose>`, the key used for records and fixtures.
pub fn request_id(session_id: &str, purpose: &str) -> String {
    format!("{session_id}__{purpose}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_then_caps() {
        let mut ep = ModelEndpoint::new("http://x", "m", "K");
        ep.backoff_base_ms = 100;
        ep.backoff_max_ms = 350;
        let ms: Vec<u128> = (1..=4).map(|r| ep.backoff(r).as_millis()).collect();
        assert_eq!(ms, vec![100, 200, 350, 350]);
        assert_eq!(ep.backoff(200).as_millis(), 350);
    }

    #[test]
    fn validation() {
        let mut ep = ModelEndpoint::new("http://localhost:1/", "m", "K");
        assert!(ep.validate().is_ok());
        assert_eq!(ep.url(), "http://localhost:1/v1/chat/completions");
        ep.max_concurrent = 0;
        assert!(ep.validate().is_err());
        ep.max_concurrent = 1;
        ep.timeout_s = 0.0;
        assert!(ep.validate().is_err());
    }

    #[test]
    fn endpoint_json_defaults() {
        let ep: ModelEndpoint = serde_json::from_str(
            r#"{"base_url":"https://api.example.com","model_name":"m","api_key_env":"KEY"}"#,
        )
        .unwrap();
        assert_eq!(ep, ModelEndpoint::new("https://api.example.com", "m", "KEY"));
    }
}
