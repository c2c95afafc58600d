use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::rngs::StdRng;
use rand::SeedableRng;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::json;

use super::retry::{full_jitter_delay, RetryPolicy};
use super::{Backend, BackendError, BackendErrorKind, CallContext, CompletionRequest, CompletionResult, FinishReason, TokenUsage};
use crate::config::{BackendKind, ModelConfig};

/// Environment variable holding the API credential. Credentials are never
/// read from configuration files and never written to traces.
pub const API_KEY_ENV: &str = "ADEPT_API_KEY";

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Blocking client for an OpenAI-style `chat/completions` endpoint.
pub struct LiveBackend {
    client: Client,
    endpoint: String,
    api_key: String,
    policy: RetryPolicy,
    rng: Mutex<StdRng>,
    sleep: Sleeper,
}

impl std::fmt::Debug for LiveBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveBackend")
            .field("endpoint", &self.endpoint)
            .field("policy", &self.policy)
            .finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u32,
    completion_tokens: u32,
}

impl LiveBackend {
    pub fn new(config: &ModelConfig, api_key: impl Into<String>) -> Result<Self, BackendError> {
        if config.backend_kind != BackendKind::Live {
            return Err(BackendError::new(BackendErrorKind::MalformedRequest, "model config is not a live backend"));
        }
        let endpoint = config
            .endpoint_url
            .clone()
            .ok_or_else(|| BackendError::new(BackendErrorKind::MalformedRequest, "endpoint_url is not set"))?;
        let client = Client::builder()
            .timeout(config.request_timeout())
            .build()
            .map_err(|e| BackendError::new(BackendErrorKind::Transport, e.to_string()))?;
        Ok(LiveBackend {
            client,
            endpoint,
            api_key: api_key.into(),
            policy: RetryPolicy {
                max_retries: config.max_retries,
            },
            rng: Mutex::new(StdRng::from_entropy()),
            sleep: Arc::new(std::thread::sleep),
        })
    }

    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(config: &ModelConfig) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| BackendError::new(BackendErrorKind::Auth, format!("{API_KEY_ENV} is not set")))?;
        Self::new(config, key)
    }

    /// Replaces the sleep used between retries (tests use a recording no-op).
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    pub fn with_seed(self, seed: u64) -> Self {
        *self.rng.lock().unwrap() = StdRng::seed_from_u64(seed);
        self
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let body = json!({
            "model": request.model_id,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(classify_transport)?;
        let status = response.status();
        let text = response.text().map_err(classify_transport)?;
        if !status.is_success() {
            return Err(classify_status(status, &text));
        }
        parse_body(&text)
    }
}

fn classify_transport(err: reqwest::Error) -> BackendError {
    let kind = if err.is_timeout() {
        BackendErrorKind::Timeout
    } else {
        BackendErrorKind::Transport
    };
    BackendError::new(kind, err.to_string())
}

fn classify_status(status: StatusCode, body: &str) -> BackendError {
    let snippet: String = body.chars().take(300).collect();
    let detail = format!("HTTP {}: {snippet}", status.as_u16());
    let lower = body.to_ascii_lowercase();
    let kind = match status {
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => BackendErrorKind::Auth,
        StatusCode::TOO_MANY_REQUESTS => BackendErrorKind::RateLimited,
        StatusCode::REQUEST_TIMEOUT | StatusCode::GATEWAY_TIMEOUT => BackendErrorKind::Timeout,
        s if s.is_server_error() => BackendErrorKind::Transport,
        _ if lower.contains("context_length_exceeded")
            || lower.contains("maximum context length")
            || lower.contains("context window") =>
        {
            BackendErrorKind::ContextOverflow
        }
        _ => BackendErrorKind::MalformedResponse,
    };
    BackendError::new(kind, detail)
}

fn parse_body(text: &str) -> Result<CompletionResult, BackendError> {
    let wire: WireResponse = serde_json::from_str(text)
        .map_err(|e| BackendError::new(BackendErrorKind::MalformedResponse, format!("unparseable body: {e}")))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::new(BackendErrorKind::MalformedResponse, "response has no choices"))?;
    let finish_reason = FinishReason::from_wire(choice.finish_reason.as_deref());
    let text = choice.message.content.unwrap_or_default();
    if text.trim().is_empty() {
        let kind = if finish_reason == FinishReason::Length {
            BackendErrorKind::ContextOverflow
        } else {
            BackendErrorKind::MalformedResponse
        };
        return Err(BackendError::new(kind, format!("empty completion (finish_reason {finish_reason:?})")));
    }
    Ok(CompletionResult {
        text,
        finish_reason,
        token_usage: wire.usage.map(|u| TokenUsage {
            prompt: u.prompt_tokens,
            completion: u.completion_tokens,
        }),
    })
}

impl Backend for LiveBackend {
    fn complete(&self, ctx: &CallContext, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        request.validate()?;
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Ok(result) => return Ok(result),
                Err(err) if err.retryable() && attempt < self.policy.max_retries => {
                    let delay = full_jitter_delay(attempt, &mut *self.rng.lock().unwrap());
                    tracing::warn!(
                        persona = %ctx.persona_name,
                        phase = %ctx.phase,
                        attempt = attempt + 1,
                        ?delay,
                        "retrying after {err}"
                    );
                    (self.sleep)(delay);
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}
