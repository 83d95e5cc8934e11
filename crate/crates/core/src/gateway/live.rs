use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{BackendConfig, ChatBackend, CompletionRequest, CompletionResponse, GatewayError, TokenUsage};

enum Attempt {
    Retry(GatewayError),
    Fatal(GatewayError),
}

/// JSON-over-HTTP POST with bounded retries. Shared by the chat and
/// embedding backends.
#[derive(Clone)]
pub(crate) struct HttpJson {
    agent: ureq::Agent,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
}

impl HttpJson {
    pub(crate) fn new(timeout: Duration, api_key: Option<String>, max_retries: u32, backoff: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        HttpJson {
            agent,
            api_key,
            max_retries,
            backoff,
        }
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<Value, Attempt> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(Attempt::Retry(GatewayError::Timeout { attempts: 0 })),
            Err(e) => {
                return Err(Attempt::Retry(GatewayError::Transport {
                    attempts: 0,
                    reason: e.to_string(),
                }))
            }
        };
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| {
            Attempt::Retry(GatewayError::Transport {
                attempts: 0,
                reason: e.to_string(),
            })
        })?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(GatewayError::BackendRefused { status, body: text }));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(GatewayError::BackendRefused { status, body: text }));
        }
        serde_json::from_str(&text).map_err(|e| Attempt::Fatal(GatewayError::BadResponse(e.to_string())))
    }

    /// Makes up to `max_retries + 1` attempts. Only transport failures,
    /// timeouts, 429 and 5xx are retried.
    pub(crate) fn post(&self, url: &str, body: &Value) -> Result<Value, GatewayError> {
        let total = self.max_retries + 1;
        let mut last = None;
        for n in 1..=total {
            match self.attempt(url, body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    log::warn!("attempt {n}/{total} to {url} failed: {e}");
                    last = Some(e);
                    if n < total && !self.backoff.is_zero() {
                        std::thread::sleep(self.backoff * 2u32.saturating_pow(n - 1));
                    }
                }
            }
        }
        Err(match last.expect("at least one attempt") {
            GatewayError::Transport { reason, .. } => GatewayError::Transport { attempts: total, reason },
            GatewayError::Timeout { .. } => GatewayError::Timeout { attempts: total },
            other => other,
        })
    }
}

pub(crate) fn api_key_from_env(var: Option<&str>) -> Option<String> {
    var.and_then(|v| std::env::var(v).ok()).filter(|k| !k.is_empty())
}

pub(crate) fn join_endpoint(base: &str, path: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with(path) {
        base.to_string()
    } else {
        format!("{base}{path}")
    }
}

/// Chat-completion client for any server speaking the widely used
/// `/chat/completions` JSON protocol.
#[derive(Clone)]
pub struct LiveBackend {
    http: HttpJson,
    url: String,
    model: String,
}

impl LiveBackend {
    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| GatewayError::InvalidConfig("live backend needs an endpoint".into()))?;
        let model = config
            .model_name
            .clone()
            .ok_or_else(|| GatewayError::InvalidConfig("live backend needs a model_name".into()))?;
        Ok(LiveBackend {
            http: HttpJson::new(
                config.timeout(),
                api_key_from_env(config.api_key_env.as_deref()),
                config.max_retries,
                Duration::from_millis(config.retry_backoff_ms),
            ),
            url: join_endpoint(endpoint, "/chat/completions"),
            model,
        })
    }

    pub fn request_body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output,
            "stream": false,
        });
        if let Some(seed) = request.seed_hint {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        request.validate()?;
        let start = Instant::now();
        let value = self.http.post(&self.url, &self.request_body(request))?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::BadResponse("missing choices[0].message.content".into()))?;
        Ok(CompletionResponse {
            text: text.to_string(),
            backend_id: self.id(),
            latency: start.elapsed(),
            usage: usage_of(&value),
        })
    }

    fn id(&self) -> String {
        format!("live:{}@{}", self.model, self.url)
    }
}

fn usage_of(value: &Value) -> Option<TokenUsage> {
    let field = |name: &str| value.pointer(&format!("/usage/{name}")).and_then(Value::as_u64);
    Some(TokenUsage {
        prompt_tokens: field("prompt_tokens")?,
        completion_tokens: field("completion_tokens")?,
    })
}
