//! The chat-completion contract shared by the live HTTP client and the
//! scripted replay backend.

mod live;
mod retry;
mod scripted;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::prompt::{ChatMessage, Phase, PromptBundle, Role};

pub use live::{LiveBackend, API_KEY_ENV};
pub use retry::{backoff_ceiling, full_jitter_delay, RetryPolicy, BACKOFF_BASE, BACKOFF_FACTOR, BACKOFF_MAX};
pub use scripted::{Script, ScriptEntry, ScriptError, ScriptedBackend, SCRIPT_FORMAT};

/// Identifies who is speaking in which phase; scripted backends key on it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CallContext {
    pub persona_name: String,
    pub phase: Phase,
}

impl CallContext {
    pub fn new(persona_name: impl Into<String>, phase: Phase) -> Self {
        CallContext {
            persona_name: persona_name.into(),
            phase,
        }
    }

    pub fn of(bundle: &PromptBundle) -> Self {
        CallContext::new(bundle.persona_name.clone(), bundle.phase)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl CompletionRequest {
    pub fn from_bundle(bundle: &PromptBundle, config: &ModelConfig) -> Self {
        CompletionRequest {
            messages: bundle.messages.clone(),
            model_id: config.model_id.clone(),
            temperature: config.temperature,
            max_output_tokens: config.max_output_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.messages.first() {
            None => Err(BackendError::new(BackendErrorKind::MalformedRequest, "request has no messages")),
            Some(m) if m.role != Role::System => Err(BackendError::new(
                BackendErrorKind::MalformedRequest,
                "first message must have the system role",
            )),
            Some(_) if self.messages.iter().any(|m| m.content.is_empty()) => Err(BackendError::new(
                BackendErrorKind::MalformedRequest,
                "message content must not be empty",
            )),
            Some(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

impl FinishReason {
    pub fn from_wire(s: Option<&str>) -> Self {
        match s {
            Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenUsage {
    pub prompt: u32,
    pub completion: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionResult {
    pub text: String,
    pub finish_reason: FinishReason,
    pub token_usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendErrorKind {
    Transport,
    Timeout,
    Auth,
    RateLimited,
    MalformedResponse,
    ContextOverflow,
    ScriptExhausted,
    /// Strict scripted replay: the prompt differs from the one recorded.
    ScriptMismatch,
    /// The request violated the contract before anything was sent.
    MalformedRequest,
}

impl BackendErrorKind {
    pub fn is_retryable(self) -> bool {
        matches!(
            self,
            BackendErrorKind::Transport | BackendErrorKind::Timeout | BackendErrorKind::RateLimited
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendError {
    pub kind: BackendErrorKind,
    pub detail: String,
}

impl BackendError {
    pub fn new(kind: BackendErrorKind, detail: impl Into<String>) -> Self {
        BackendError {
            kind,
            detail: detail.into(),
        }
    }

    pub fn retryable(&self) -> bool {
        self.kind.is_retryable()
    }
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = serde_json::to_value(self.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        write!(f, "{kind}: {}", self.detail)
    }
}

impl std::error::Error for BackendError {}

/// A chat-completion source. Implementations must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn complete(&self, ctx: &CallContext, request: &CompletionRequest) -> Result<CompletionResult, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, ctx: &CallContext, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        (**self).complete(ctx, request)
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, ctx: &CallContext, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        (**self).complete(ctx, request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, ctx: &CallContext, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        (**self).complete(ctx, request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retryable_iff_transient() {
        use BackendErrorKind::*;
        for kind in [
            Transport,
            Timeout,
            Auth,
            RateLimited,
            MalformedResponse,
            ContextOverflow,
            ScriptExhausted,
            ScriptMismatch,
            MalformedRequest,
        ] {
            let expected = matches!(kind, Transport | Timeout | RateLimited);
            assert_eq!(BackendError::new(kind, "x").retryable(), expected, "{kind:?}");
        }
    }

    #[test]
    fn request_must_start_with_system() {
        let req = CompletionRequest {
            messages: vec![ChatMessage::user("hi".into())],
            model_id: "m".into(),
            temperature: 0.7,
            max_output_tokens: 10,
        };
        assert_eq!(req.validate().unwrap_err().kind, BackendErrorKind::MalformedRequest);
    }

    #[test]
    fn error_display() {
        let e = BackendError::new(BackendErrorKind::RateLimited, "slow down");
        assert_eq!(e.to_string(), "rate_limited: slow down");
    }
}
