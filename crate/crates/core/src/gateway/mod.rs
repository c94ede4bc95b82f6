//! Chat-completion gateway with per-utterance budget enforcement.
//!
//! [`complete`] is the only way pipeline code talks to a [`Backend`]. It
//! checks the call, token and wall-clock budgets of a [`BudgetProfile`]
//! against a [`CallLedger`] that lives for exactly one player utterance.

mod mock;
mod remote;

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{Phase, RenderedPrompt};
use crate::text::{approx_token_count, truncate_tokens};
use crate::toolbox::{ToolCall, ToolSchema};

pub use mock::{MockBackend, MockScript, ScriptedError, ScriptedResponse};
pub use remote::{RemoteBackend, RemoteConfig, DEFAULT_MODEL, ENV_API_BASE, ENV_API_KEY};
pub(crate) use remote::post_json as remote_post_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetKind {
    Calls,
    InputTokens,
    OutputTokens,
}

impl fmt::Display for BudgetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BudgetKind::Calls => "calls",
            BudgetKind::InputTokens => "input_tokens",
            BudgetKind::OutputTokens => "output_tokens",
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("budget exceeded: {0}")]
    BudgetExceeded(BudgetKind),
    #[error("turn timed out after {elapsed_ms} ms (limit {limit_ms} ms)")]
    Timeout { elapsed_ms: u64, limit_ms: u64 },
    #[error("transport error{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    TransportError { status: Option<u16>, message: String },
}

impl GatewayError {
    pub fn transport(status: Option<u16>, message: impl Into<String>) -> Self {
        Self::TransportError {
            status,
            message: message.into(),
        }
    }
}

/// Per-utterance limits. `None` means unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetProfile {
    pub id: String,
    pub max_calls_per_utterance: Option<u32>,
    pub max_input_tokens: Option<usize>,
    pub max_output_tokens: Option<usize>,
    pub turn_timeout_ms: u64,
    /// Fraction of each token limit actually granted, to absorb the gap
    /// between the approximate tokenizer and provider tokenizers.
    #[serde(default = "default_safety_factor")]
    pub safety_factor: f64,
    /// Retries after a transport error. Timeouts are never retried.
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_safety_factor() -> f64 {
    0.9
}

fn default_retries() -> u32 {
    1
}

pub const API_TRACK: &str = "api-track";
pub const GPU_TRACK: &str = "gpu-track";

impl BudgetProfile {
    pub fn api_track() -> Self {
        Self {
            id: API_TRACK.into(),
            max_calls_per_utterance: Some(2),
            max_input_tokens: Some(2000),
            max_output_tokens: Some(200),
            turn_timeout_ms: 7000,
            safety_factor: default_safety_factor(),
            max_retries: default_retries(),
        }
    }

    pub fn gpu_track() -> Self {
        Self {
            id: GPU_TRACK.into(),
            max_calls_per_utterance: None,
            max_input_tokens: None,
            max_output_tokens: None,
            turn_timeout_ms: 7000,
            safety_factor: default_safety_factor(),
            max_retries: default_retries(),
        }
    }

    /// Looks up a preset by id (`api-track`, `gpu-track`; underscores accepted).
    pub fn preset(name: &str) -> Option<Self> {
        match name.trim().to_lowercase().replace('_', "-").as_str() {
            API_TRACK | "api" => Some(Self::api_track()),
            GPU_TRACK | "gpu" => Some(Self::gpu_track()),
            _ => None,
        }
    }

    fn scaled(&self, limit: Option<usize>) -> Option<usize> {
        limit.map(|l| (l as f64 * self.safety_factor).floor() as usize)
    }

    /// Input tokens a single prompt may use after the safety factor.
    pub fn effective_input_limit(&self) -> Option<usize> {
        self.scaled(self.max_input_tokens)
    }

    /// Output tokens an utterance may consume after the safety factor.
    pub fn effective_output_limit(&self) -> Option<usize> {
        self.scaled(self.max_output_tokens)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.turn_timeout_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub rendered: RenderedPrompt,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_schemas: Option<Vec<ToolSchema>>,
    pub max_output_tokens: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub native_tool_calls: Option<Vec<ToolCall>>,
    pub input_tokens: usize,
    pub output_tokens: usize,
    pub latency_ms: u64,
}

/// What a backend returns before the gateway does its accounting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BackendReply {
    pub text: String,
    pub native_tool_calls: Option<Vec<ToolCall>>,
    pub latency_ms: u64,
}

/// A chat-completion provider. Implementations must return by `deadline`
/// (or shortly after with [`GatewayError::Timeout`]); the gateway treats any
/// reply arriving later as a timeout.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn supports_native_tools(&self) -> bool {
        false
    }

    fn chat(&self, request: &CompletionRequest, deadline: Instant) -> Result<BackendReply, GatewayError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn supports_native_tools(&self) -> bool {
        (**self).supports_native_tools()
    }

    fn chat(&self, request: &CompletionRequest, deadline: Instant) -> Result<BackendReply, GatewayError> {
        (**self).chat(request, deadline)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn supports_native_tools(&self) -> bool {
        (**self).supports_native_tools()
    }

    fn chat(&self, request: &CompletionRequest, deadline: Instant) -> Result<BackendReply, GatewayError> {
        (**self).chat(request, deadline)
    }
}

/// Accounting for one utterance. Not meant to be shared between threads.
#[derive(Debug, Clone)]
pub struct CallLedger {
    utterance_id: String,
    calls_made: u32,
    attempts: u32,
    elapsed_ms: u64,
    token_in_total: usize,
    token_out_total: usize,
    started: Instant,
}

/// Serializable view of a [`CallLedger`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub utterance_id: String,
    pub calls_made: u32,
    pub attempts: u32,
    pub elapsed_ms: u64,
    pub token_in_total: usize,
    pub token_out_total: usize,
}

impl CallLedger {
    pub fn new(utterance_id: impl Into<String>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            calls_made: 0,
            attempts: 0,
            elapsed_ms: 0,
            token_in_total: 0,
            token_out_total: 0,
            started: Instant::now(),
        }
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn calls_made(&self) -> u32 {
        self.calls_made
    }

    /// Reported backend latency summed over every attempt.
    pub fn elapsed_ms(&self) -> u64 {
        self.elapsed_ms
    }

    pub fn token_in_total(&self) -> usize {
        self.token_in_total
    }

    pub fn token_out_total(&self) -> usize {
        self.token_out_total
    }

    pub fn started(&self) -> Instant {
        self.started
    }

    /// Whether another call fits the profile's call limit.
    pub fn can_call(&self, profile: &BudgetProfile) -> bool {
        profile
            .max_calls_per_utterance
            .is_none_or(|max| self.calls_made < max)
    }

    pub fn deadline(&self, profile: &BudgetProfile) -> Instant {
        self.started + profile.timeout()
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            utterance_id: self.utterance_id.clone(),
            calls_made: self.calls_made,
            attempts: self.attempts,
            elapsed_ms: self.elapsed_ms,
            token_in_total: self.token_in_total,
            token_out_total: self.token_out_total,
        }
    }
}

/// Sends `request` through `backend` under `profile`, updating `ledger`.
///
/// Checks, in order: call count, input tokens of this prompt, remaining
/// output tokens of the utterance, and the turn deadline. The output limit
/// passed to the backend is the smaller of the request's and what the
/// utterance has left; longer replies are truncated before accounting.
pub fn complete(
    backend: &dyn Backend,
    request: &CompletionRequest,
    ledger: &mut CallLedger,
    profile: &BudgetProfile,
) -> Result<CompletionResponse, GatewayError> {
    if !ledger.can_call(profile) {
        return Err(GatewayError::BudgetExceeded(BudgetKind::Calls));
    }
    let input_tokens = request.rendered.approx_tokens;
    if profile
        .effective_input_limit()
        .is_some_and(|limit| input_tokens > limit)
    {
        return Err(GatewayError::BudgetExceeded(BudgetKind::InputTokens));
    }
    let mut max_output = request.max_output_tokens.max(1);
    if let Some(limit) = profile.effective_output_limit() {
        let remaining = limit.saturating_sub(ledger.token_out_total);
        if remaining == 0 {
            return Err(GatewayError::BudgetExceeded(BudgetKind::OutputTokens));
        }
        max_output = max_output.min(remaining);
    }
    let limit_ms = profile.turn_timeout_ms;
    let deadline = ledger.deadline(profile);
    let timeout = |ledger: &CallLedger| GatewayError::Timeout {
        elapsed_ms: ledger.elapsed_ms.max(ledger.started.elapsed().as_millis() as u64),
        limit_ms,
    };

    let mut sized = request.clone();
    sized.max_output_tokens = max_output;
    if !backend.supports_native_tools() {
        sized.tool_schemas = None;
    }

    let mut retries_left = profile.max_retries;
    let reply = loop {
        if Instant::now() >= deadline || ledger.elapsed_ms > limit_ms {
            return Err(timeout(ledger));
        }
        ledger.attempts += 1;
        let sent = Instant::now();
        match backend.chat(&sized, deadline) {
            Ok(reply) => {
                ledger.elapsed_ms += reply.latency_ms;
                break reply;
            }
            Err(GatewayError::TransportError { status, message }) => {
                ledger.elapsed_ms += sent.elapsed().as_millis() as u64;
                if retries_left == 0 {
                    return Err(GatewayError::TransportError { status, message });
                }
                retries_left -= 1;
                log::warn!("backend {} transport error ({message}); retrying", backend.id());
            }
            Err(GatewayError::Timeout { .. }) => {
                ledger.elapsed_ms += sent.elapsed().as_millis() as u64;
                return Err(timeout(ledger));
            }
            Err(other) => return Err(other),
        }
    };
    if Instant::now() > deadline || ledger.elapsed_ms > limit_ms {
        return Err(timeout(ledger));
    }

    let text = truncate_tokens(&reply.text, max_output).to_string();
    let output_tokens = approx_token_count(&text);
    ledger.calls_made += 1;
    ledger.token_in_total += input_tokens;
    ledger.token_out_total += output_tokens;
    Ok(CompletionResponse {
        text,
        native_tool_calls: reply.native_tool_calls,
        input_tokens,
        output_tokens,
        latency_ms: reply.latency_ms,
    })
}
