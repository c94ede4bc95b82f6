//! OpenAI-compatible chat-completions backend.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Backend, BackendReply, CompletionRequest, GatewayError};
use crate::toolbox::{parse_tool_calls, ToolCall};
use crate::world::Speaker;

pub const ENV_API_BASE: &str = "NPCFORGE_API_BASE";
pub const ENV_API_KEY: &str = "NPCFORGE_API_KEY";
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";
const DEFAULT_BASE: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteConfig {
    pub api_base: String,
    pub api_key: Option<String>,
    pub model: String,
    pub native_tools: bool,
}

impl RemoteConfig {
    /// Reads the endpoint and key from `NPCFORGE_API_BASE` / `NPCFORGE_API_KEY`.
    pub fn from_env(model: Option<&str>) -> Self {
        Self {
            api_base: std::env::var(ENV_API_BASE).unwrap_or_else(|_| DEFAULT_BASE.to_string()),
            api_key: std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty()),
            model: model.unwrap_or(DEFAULT_MODEL).to_string(),
            native_tools: true,
        }
    }

    pub(crate) fn url(&self, path: &str) -> String {
        format!("{}/{}", self.api_base.trim_end_matches('/'), path)
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        Self {
            config,
            client: reqwest::blocking::Client::new(),
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.rendered.system_text})];
        for m in &request.rendered.messages {
            let role = match m.speaker {
                Speaker::Player => "user",
                Speaker::Npc => "assistant",
            };
            messages.push(json!({"role": role, "content": m.text}));
        }
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "max_tokens": request.max_output_tokens,
        });
        if let Some(schemas) = request.tool_schemas.as_ref().filter(|s| !s.is_empty()) {
            let tools: Vec<Value> = schemas
                .iter()
                .map(|s| {
                    json!({
                        "type": "function",
                        "function": {
                            "name": s.name,
                            "description": s.description,
                            "parameters": s.parameters_json_schema(),
                        }
                    })
                })
                .collect();
            body["tools"] = Value::Array(tools);
        }
        body
    }
}

/// Sends a JSON POST bounded by `deadline`, mapping failures onto gateway errors.
pub(crate) fn post_json(
    client: &reqwest::blocking::Client,
    config: &RemoteConfig,
    path: &str,
    body: &Value,
    deadline: Instant,
) -> Result<Value, GatewayError> {
    let remaining = deadline.saturating_duration_since(Instant::now());
    if remaining.is_zero() {
        return Err(GatewayError::Timeout {
            elapsed_ms: 0,
            limit_ms: 0,
        });
    }
    let mut builder = client.post(config.url(path)).timeout(remaining).json(body);
    if let Some(key) = &config.api_key {
        builder = builder.bearer_auth(key);
    }
    let response = builder.send().map_err(|e| map_reqwest(e, remaining))?;
    let status = response.status();
    let text = response.text().map_err(|e| map_reqwest(e, remaining))?;
    if !status.is_success() {
        let snippet: String = text.chars().take(200).collect();
        return Err(GatewayError::transport(Some(status.as_u16()), snippet));
    }
    serde_json::from_str(&text)
        .map_err(|e| GatewayError::transport(Some(status.as_u16()), format!("invalid JSON body: {e}")))
}

fn map_reqwest(e: reqwest::Error, waited: Duration) -> GatewayError {
    if e.is_timeout() {
        GatewayError::Timeout {
            elapsed_ms: waited.as_millis() as u64,
            limit_ms: 0,
        }
    } else {
        GatewayError::transport(e.status().map(|s| s.as_u16()), e.to_string())
    }
}

fn reply_from_body(body: &Value) -> Result<(String, Option<Vec<ToolCall>>), GatewayError> {
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| GatewayError::transport(None, "response has no choices[0].message"))?;
    let text = message
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let tool_calls = match message.get("tool_calls") {
        Some(Value::Array(items)) if !items.is_empty() => {
            // The wire form is one of the payload shapes the parser accepts.
            let calls = parse_tool_calls(&Value::Array(items.clone()).to_string())
                .map_err(|e| GatewayError::transport(None, e.message))?;
            Some(calls)
        }
        _ => None,
    };
    Ok((text, tool_calls))
}

impl Backend for RemoteBackend {
    fn id(&self) -> &str {
        &self.config.model
    }

    fn supports_native_tools(&self) -> bool {
        self.config.native_tools
    }

    fn chat(&self, request: &CompletionRequest, deadline: Instant) -> Result<BackendReply, GatewayError> {
        let start = Instant::now();
        let body = post_json(&self.client, &self.config, "chat/completions", &self.body(request), deadline)?;
        let (text, native_tool_calls) = reply_from_body(&body)?;
        Ok(BackendReply {
            text,
            native_tool_calls,
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }
}
