//! Chat-completion access shared by every stage.
//!
//! Two backends implement [`ChatBackend`]: [`LiveBackend`] speaks the common
//! HTTP/JSON chat-completion protocol, [`MockBackend`] answers from a fixture
//! directory or a deterministic synthetic responder. [`parse_json_array`]
//! turns model output into records under a configurable repair level.

mod json_array;
mod live;
mod mock;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use json_array::{parse_json_array, parse_json_records, ParseError, Record, RepairLevel};
pub use live::LiveBackend;
pub(crate) use live::{api_key_from_env, join_endpoint, HttpJson};
pub use mock::{request_hash, MockBackend, Synthetic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_output: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_hint: Option<u64>,
}

impl CompletionRequest {
    pub fn new(system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        CompletionRequest {
            system_text: system_text.into(),
            user_text: user_text.into(),
            temperature: 0.0,
            max_output: 4096,
            seed_hint: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.system_text.trim().is_empty() || self.user_text.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt text".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub text: String,
    pub backend_id: String,
    pub latency: Duration,
    /// Token counts, when the backend reports them.
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {reason}")]
    Transport { attempts: u32, reason: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("backend refused request with status {status}: {body}")]
    BackendRefused { status: u16, body: String },
    #[error("backend response not understood: {0}")]
    BadResponse(String),
    #[error("no mock fixture for request hash {0}")]
    MissingFixture(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
}

/// Anything that can answer a chat-completion request.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError>;

    /// Stable identity used in cache keys; never includes credentials.
    fn id(&self) -> String;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        (**self).complete(request)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Base URL; `/chat/completions` is appended unless already present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    /// Environment variable holding a bearer token for the live endpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_dir: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Synthetic,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_retries() -> u32 {
    2
}
fn default_timeout() -> f64 {
    120.0
}
fn default_backoff() -> u64 {
    500
}
fn default_in_flight() -> usize {
    4
}

impl BackendConfig {
    pub fn mock() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: None,
            api_key_env: None,
            fixture_dir: None,
            synthetic: Synthetic::default(),
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
            retry_backoff_ms: default_backoff(),
            max_in_flight: default_in_flight(),
        }
    }

    pub fn live(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Live,
            endpoint: Some(endpoint.into()),
            model_name: Some(model_name.into()),
            ..Self::mock()
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.001))
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.kind {
            BackendKind::Live => {
                if self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
                    return Err(GatewayError::InvalidConfig("live backend needs an endpoint".into()));
                }
                if self.model_name.as_deref().is_none_or(|m| m.trim().is_empty()) {
                    return Err(GatewayError::InvalidConfig("live backend needs a model_name".into()));
                }
                if self.fixture_dir.is_some() {
                    return Err(GatewayError::InvalidConfig("fixture_dir is only valid for mock backends".into()));
                }
            }
            BackendKind::Mock => {
                if self.endpoint.is_some() || self.model_name.is_some() {
                    return Err(GatewayError::InvalidConfig(
                        "endpoint/model_name are only valid for live backends".into(),
                    ));
                }
                if self.fixture_dir.is_none() && self.synthetic == Synthetic::None {
                    return Err(GatewayError::InvalidConfig(
                        "mock backend needs a fixture_dir or a synthetic responder".into(),
                    ));
                }
            }
        }
        if !(self.timeout_secs > 0.0) {
            return Err(GatewayError::InvalidConfig("timeout_secs must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::InvalidConfig("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Arc<dyn ChatBackend>, GatewayError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Live => Arc::new(LiveBackend::from_config(self)?),
            BackendKind::Mock => Arc::new(MockBackend::from_config(self)?),
        })
    }
}

/// One-shot completion against a configured backend.
pub fn complete(request: &CompletionRequest, config: &BackendConfig) -> Result<CompletionResponse, GatewayError> {
    config.build()?.complete(request)
}
