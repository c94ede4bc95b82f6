//! Scripted backend for tests, replay and offline evaluation.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendReply, CompletionRequest, GatewayError};
use crate::toolbox::ToolCall;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedError {
    #[serde(default)]
    pub status: Option<u16>,
    pub message: String,
}

/// One queued reply.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScriptedResponse {
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<ToolCall>>,
    /// Latency reported to the ledger without actually waiting.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub delay_ms: u64,
    /// Real wall-clock stall before replying, cut short at the deadline.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub stall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport_error: Option<ScriptedError>,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

impl ScriptedResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }

    pub fn transport_error(status: Option<u16>, message: impl Into<String>) -> Self {
        Self {
            transport_error: Some(ScriptedError {
                status,
                message: message.into(),
            }),
            ..Self::default()
        }
    }
}

/// Script file contents: replies consumed in order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockScript {
    pub responses: Vec<ScriptedResponse>,
}

impl MockScript {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            responses: texts.into_iter().map(ScriptedResponse::text).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

/// Replies from a [`MockScript`] in order, one entry per attempt. Requests
/// are recorded so tests can inspect the prompts that were sent.
#[derive(Debug)]
pub struct MockBackend {
    id: String,
    native_tools: bool,
    queue: Mutex<VecDeque<ScriptedResponse>>,
    requests: Mutex<Vec<CompletionRequest>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self {
            id: "mock".into(),
            native_tools: false,
            queue: Mutex::new(script.responses.into()),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Makes the backend advertise native tool calling, so requests keep
    /// their tool schemas.
    pub fn with_native_tools(mut self) -> Self {
        self.native_tools = true;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Replies not yet consumed.
    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("mock queue poisoned").len()
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.requests.lock().expect("mock log poisoned").clone()
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports_native_tools(&self) -> bool {
        self.native_tools
    }

    fn chat(&self, request: &CompletionRequest, deadline: Instant) -> Result<BackendReply, GatewayError> {
        self.requests
            .lock()
            .expect("mock log poisoned")
            .push(request.clone());
        let next = self.queue.lock().expect("mock queue poisoned").pop_front();
        let Some(entry) = next else {
            return Err(GatewayError::transport(None, "mock script exhausted"));
        };
        let mut stalled = 0;
        if entry.stall_ms > 0 {
            let start = Instant::now();
            let until = (start + Duration::from_millis(entry.stall_ms)).min(deadline);
            std::thread::sleep(until.saturating_duration_since(start));
            stalled = start.elapsed().as_millis() as u64;
            if stalled < entry.stall_ms && Instant::now() >= deadline {
                return Err(GatewayError::Timeout {
                    elapsed_ms: stalled,
                    limit_ms: 0,
                });
            }
        }
        if let Some(err) = entry.transport_error {
            return Err(GatewayError::transport(err.status, err.message));
        }
        Ok(BackendReply {
            text: entry.text,
            native_tool_calls: entry.tool_calls,
            latency_ms: entry.delay_ms + stalled,
        })
    }
}
