//! Tool declarations, call parsing, argument validation and execution
//! against world knowledge.
//!
//! Tools are read-only knowledge probes: executing a call never mutates the
//! world, it only returns the matching [`KnowledgeEntry`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::world::{KnowledgeEntry, KnowledgeKind, NpcRole};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
    Enum { labels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSchema {
    pub name: String,
    #[serde(flatten)]
    pub ty: ParamType,
    #[serde(default = "default_true")]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub params: Vec<ParamSchema>,
}

impl ToolSchema {
    pub fn param(&self, name: &str) -> Option<&ParamSchema> {
        self.params.iter().find(|p| p.name == name)
    }

    /// JSON-schema object for the parameters, as used by native tool calling.
    pub fn parameters_json_schema(&self) -> Value {
        let mut properties = serde_json::Map::new();
        let mut required = Vec::new();
        for p in &self.params {
            let mut prop = serde_json::Map::new();
            match &p.ty {
                ParamType::String => {
                    prop.insert("type".into(), "string".into());
                }
                ParamType::Integer => {
                    prop.insert("type".into(), "integer".into());
                }
                ParamType::Enum { labels } => {
                    prop.insert("type".into(), "string".into());
                    prop.insert("enum".into(), labels.clone().into());
                }
            }
            if let Some(d) = &p.description {
                prop.insert("description".into(), d.clone().into());
            }
            properties.insert(p.name.clone(), Value::Object(prop));
            if p.required {
                required.push(Value::String(p.name.clone()));
            }
        }
        serde_json::json!({
            "type": "object",
            "properties": properties,
            "required": required,
        })
    }
}

/// A function invocation emitted by a model or recorded as gold data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default, rename = "parameters", alias = "arguments")]
    pub arguments: BTreeMap<String, Value>,
}

impl ToolCall {
    pub fn new<K: Into<String>, V: Into<Value>>(
        name: impl Into<String>,
        arguments: impl IntoIterator<Item = (K, V)>,
    ) -> Self {
        Self {
            name: name.into(),
            arguments: arguments
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        }
    }

    /// Argument value rendered as plain text: strings verbatim, anything else
    /// as compact JSON.
    pub fn argument_text(&self, name: &str) -> Option<String> {
        self.arguments.get(name).map(value_text)
    }
}

pub(crate) fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// A call that passed [`validate_call`] against some registry.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ValidatedCall(ToolCall);

impl ValidatedCall {
    pub fn call(&self) -> &ToolCall {
        &self.0
    }

    pub fn into_inner(self) -> ToolCall {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    NotFound,
    ExecError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call: ToolCall,
    pub status: ToolStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<KnowledgeEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl ToolResult {
    fn ok(call: ToolCall, knowledge: KnowledgeEntry) -> Self {
        Self {
            call,
            status: ToolStatus::Ok,
            knowledge: Some(knowledge),
            message: None,
        }
    }

    fn failed(call: ToolCall, status: ToolStatus, message: String) -> Self {
        Self {
            call,
            status,
            knowledge: None,
            message: Some(message),
        }
    }
}

/// Built-in executor bindings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Executor {
    /// Returns the entry whose subject matches the `param` argument.
    LookupBySubject {
        param: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        knowledge_kind: Option<KnowledgeKind>,
    },
    /// Lists the subjects of every entry (optionally of one kind).
    ListAll {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        knowledge_kind: Option<KnowledgeKind>,
    },
    /// Returns the call's own arguments.
    Echo,
}

#[derive(Debug, Error, PartialEq)]
pub enum ToolError {
    #[error("unknown function '{name}' (known: {})", known.join(", "))]
    UnknownFunction { name: String, known: Vec<String> },
    #[error("function '{function}' is missing required parameter '{param}'")]
    MissingParam { function: String, param: String },
    #[error("function '{function}' parameter '{param}': {message}")]
    BadParamType {
        function: String,
        param: String,
        message: String,
    },
    #[error("function '{function}' has no parameter named '{param}'")]
    UnknownParam { function: String, param: String },
    #[error("invalid registry: {0}")]
    InvalidRegistry(String),
}

#[derive(Debug, Error)]
pub enum RegistryLoadError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid registry json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tool(#[from] ToolError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryTool {
    #[serde(flatten)]
    pub schema: ToolSchema,
    pub executor: Executor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RegistryFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    role: Option<NpcRole>,
    tools: Vec<RegistryTool>,
}

/// Immutable set of tool schemas, each bound to exactly one executor.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolRegistry {
    role: Option<NpcRole>,
    tools: Vec<RegistryTool>,
}

const MERCHANT_REGISTRY: &str = include_str!("../data/registries/merchant.json");
const GUILD_REGISTRY: &str = include_str!("../data/registries/guild_receptionist.json");

impl ToolRegistry {
    pub fn new(role: Option<NpcRole>, tools: Vec<RegistryTool>) -> Result<Self, ToolError> {
        let mut names = BTreeSet::new();
        for tool in &tools {
            let schema = &tool.schema;
            if !names.insert(schema.name.as_str()) {
                return Err(ToolError::InvalidRegistry(format!(
                    "duplicate tool name '{}'",
                    schema.name
                )));
            }
            let mut params = BTreeSet::new();
            for p in &schema.params {
                if !params.insert(p.name.as_str()) {
                    return Err(ToolError::InvalidRegistry(format!(
                        "duplicate parameter '{}' in '{}'",
                        p.name, schema.name
                    )));
                }
            }
            if let Executor::LookupBySubject { param, .. } = &tool.executor {
                if schema.param(param).is_none() {
                    return Err(ToolError::InvalidRegistry(format!(
                        "executor of '{}' reads undeclared parameter '{param}'",
                        schema.name
                    )));
                }
            }
        }
        Ok(Self { role, tools })
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryLoadError> {
        let file: RegistryFile = serde_json::from_str(text)?;
        Ok(Self::new(file.role, file.tools)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryLoadError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let file = RegistryFile {
            role: self.role.clone(),
            tools: self.tools.clone(),
        };
        serde_json::to_string_pretty(&file).expect("registry serializes")
    }

    /// Reference merchant registry.
    pub fn merchant() -> Self {
        Self::from_json(MERCHANT_REGISTRY).expect("bundled merchant registry is valid")
    }

    /// Reference guild receptionist registry.
    pub fn guild_receptionist() -> Self {
        Self::from_json(GUILD_REGISTRY).expect("bundled guild registry is valid")
    }

    /// Reference registry for a role; roles without one get an empty registry.
    pub fn for_role(role: &NpcRole) -> Self {
        match role {
            NpcRole::Merchant => Self::merchant(),
            NpcRole::GuildReceptionist => Self::guild_receptionist(),
            NpcRole::Other(_) => Self {
                role: Some(role.clone()),
                tools: Vec::new(),
            },
        }
    }

    pub fn role(&self) -> Option<&NpcRole> {
        self.role.as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn schemas(&self) -> impl Iterator<Item = &ToolSchema> {
        self.tools.iter().map(|t| &t.schema)
    }

    pub fn names(&self) -> Vec<String> {
        self.tools.iter().map(|t| t.schema.name.clone()).collect()
    }

    fn tool(&self, name: &str) -> Option<&RegistryTool> {
        self.tools.iter().find(|t| t.schema.name == name)
    }

    /// Text listing of the tools for the `{formatted_tools}` slot.
    pub fn formatted_tools(&self) -> String {
        if self.tools.is_empty() {
            return "(no functions available)".into();
        }
        self.schemas()
            .map(|s| {
                let params: Vec<String> = s
                    .params
                    .iter()
                    .map(|p| {
                        let ty = match &p.ty {
                            ParamType::String => "string".to_string(),
                            ParamType::Integer => "integer".to_string(),
                            ParamType::Enum { labels } => format!("one of [{}]", labels.join(", ")),
                        };
                        let req = if p.required { "required" } else { "optional" };
                        format!("{}: {ty}, {req}", p.name)
                    })
                    .collect();
                format!("- {}({}): {}", s.name, params.join("; "), s.description)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Checks that `call` names a registered function, carries every required
/// parameter and that each value has the declared type. Integer parameters
/// given as numeric strings are normalized to JSON numbers, and null values
/// of optional parameters are dropped.
pub fn validate_call(registry: &ToolRegistry, call: ToolCall) -> Result<ValidatedCall, ToolError> {
    let tool = registry
        .tool(&call.name)
        .ok_or_else(|| ToolError::UnknownFunction {
            name: call.name.clone(),
            known: registry.names(),
        })?;
    let schema = &tool.schema;
    let mut arguments = BTreeMap::new();
    for (name, value) in call.arguments {
        let param = schema.param(&name).ok_or_else(|| ToolError::UnknownParam {
            function: schema.name.clone(),
            param: name.clone(),
        })?;
        if value.is_null() && !param.required {
            continue;
        }
        let bad = |message: String| ToolError::BadParamType {
            function: schema.name.clone(),
            param: name.clone(),
            message,
        };
        let value = match (&param.ty, value) {
            (ParamType::String, Value::String(s)) => Value::String(s),
            (ParamType::String, other) => return Err(bad(format!("expected string, got {other}"))),
            (ParamType::Integer, Value::Number(n)) if n.is_i64() || n.is_u64() => Value::Number(n),
            (ParamType::Integer, Value::String(s)) => match s.trim().parse::<i64>() {
                Ok(n) => Value::from(n),
                Err(_) => return Err(bad(format!("expected integer, got \"{s}\""))),
            },
            (ParamType::Integer, other) => return Err(bad(format!("expected integer, got {other}"))),
            (ParamType::Enum { labels }, Value::String(s)) if labels.contains(&s) => Value::String(s),
            (ParamType::Enum { labels }, other) => {
                return Err(bad(format!("{other} is not one of [{}]", labels.join(", "))))
            }
        };
        arguments.insert(name, value);
    }
    for p in schema.params.iter().filter(|p| p.required) {
        if !arguments.contains_key(&p.name) {
            return Err(ToolError::MissingParam {
                function: schema.name.clone(),
                param: p.name.clone(),
            });
        }
    }
    Ok(ValidatedCall(ToolCall {
        name: call.name,
        arguments,
    }))
}

/// Lookup key normalization: trim, case-fold and collapse inner whitespace.
pub fn canonical_subject(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Runs a validated call against `knowledge`. Failures are reported in the
/// returned [`ToolResult`], never as an error.
pub fn execute(
    registry: &ToolRegistry,
    call: &ValidatedCall,
    knowledge: &[KnowledgeEntry],
) -> ToolResult {
    let call = call.call().clone();
    let Some(tool) = registry.tool(&call.name) else {
        let message = format!("function '{}' is not bound in this registry", call.name);
        return ToolResult::failed(call, ToolStatus::ExecError, message);
    };
    let kind_matches =
        |filter: &Option<KnowledgeKind>, e: &KnowledgeEntry| filter.is_none_or(|k| k == e.kind);
    match &tool.executor {
        Executor::LookupBySubject {
            param,
            knowledge_kind,
        } => {
            let Some(Value::String(subject)) = call.arguments.get(param) else {
                let message = format!("argument '{param}' is missing or not a string");
                return ToolResult::failed(call, ToolStatus::ExecError, message);
            };
            let key = canonical_subject(subject);
            match knowledge
                .iter()
                .find(|e| kind_matches(knowledge_kind, e) && canonical_subject(&e.subject) == key)
            {
                Some(entry) => ToolResult::ok(call, entry.clone()),
                None => {
                    let message = format!("no knowledge about '{subject}'");
                    ToolResult::failed(call, ToolStatus::NotFound, message)
                }
            }
        }
        Executor::ListAll { knowledge_kind } => {
            let subjects: Vec<&str> = knowledge
                .iter()
                .filter(|e| kind_matches(knowledge_kind, e))
                .map(|e| e.subject.as_str())
                .collect();
            if subjects.is_empty() {
                let message = "nothing to list".to_string();
                return ToolResult::failed(call, ToolStatus::NotFound, message);
            }
            let entry = KnowledgeEntry {
                id: format!("{}:list", call.name),
                kind: KnowledgeKind::General,
                subject: call.name.clone(),
                body: subjects.join(", "),
            };
            ToolResult::ok(call, entry)
        }
        Executor::Echo => {
            let entry = KnowledgeEntry {
                id: format!("{}:echo", call.name),
                kind: KnowledgeKind::General,
                subject: call.name.clone(),
                body: serde_json::to_string(&call.arguments).expect("arguments serialize"),
            };
            ToolResult::ok(call, entry)
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("cannot parse tool calls: {message}")]
pub struct ParseError {
    pub message: String,
    /// The unparsed model output, kept for logging.
    pub raw: String,
}

impl ParseError {
    fn new(message: impl Into<String>, raw: &str) -> Self {
        Self {
            message: message.into(),
            raw: raw.to_string(),
        }
    }
}

/// Extracts tool calls from a function-phase completion.
///
/// Accepted shapes, in order of precedence:
///
/// * one or more fenced blocks (```` ```json ... ``` ````), each holding a payload;
/// * a bare payload starting at the first line that opens with `[` or `{`;
/// * prose with neither, which means zero calls.
///
/// A payload is a JSON array of calls, an object holding such an array under
/// `gold_functions`, `tool_calls`, `functions` or `calls`, or a single call
/// object. A call is `{"name": ..., "parameters" | "arguments": {...}}`, or
/// the `{"function": {"name", "arguments": "<json string>"}}` wire form.
pub fn parse_tool_calls(raw: &str) -> Result<Vec<ToolCall>, ParseError> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    if raw.contains("```") {
        let mut calls = Vec::new();
        for block in fenced_blocks(raw)? {
            if block.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(block)
                .map_err(|e| ParseError::new(format!("fenced block is not valid JSON: {e}"), raw))?;
            calls.extend(calls_from_value(value, raw)?);
        }
        return Ok(calls);
    }
    let mut offset = 0;
    for line in raw.split_inclusive('\n') {
        let trimmed = line.trim_start();
        if trimmed.starts_with('[') || trimmed.starts_with('{') {
            let start = offset + (line.len() - trimmed.len());
            let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
            return match stream.next() {
                Some(Ok(value)) => calls_from_value(value, raw),
                Some(Err(e)) => Err(ParseError::new(format!("invalid JSON payload: {e}"), raw)),
                None => Err(ParseError::new("empty JSON payload", raw)),
            };
        }
        offset += line.len();
    }
    Ok(Vec::new())
}

fn fenced_blocks(raw: &str) -> Result<Vec<&str>, ParseError> {
    let mut blocks = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let after_open = &rest[open + 3..];
        // The language tag runs to the end of the opening line.
        let Some(newline) = after_open.find('\n') else {
            return Err(ParseError::new("unterminated fenced block", raw));
        };
        let body = &after_open[newline + 1..];
        let Some(close) = body.find("```") else {
            return Err(ParseError::new("unterminated fenced block", raw));
        };
        blocks.push(&body[..close]);
        rest = &body[close + 3..];
    }
    Ok(blocks)
}

fn calls_from_value(value: Value, raw: &str) -> Result<Vec<ToolCall>, ParseError> {
    match value {
        Value::Null => Ok(Vec::new()),
        Value::Array(items) => Ok(items.into_iter().filter_map(call_from_value).collect()),
        Value::Object(mut map) => {
            for key in ["gold_functions", "tool_calls", "functions", "calls"] {
                if let Some(inner) = map.remove(key) {
                    return calls_from_value(inner, raw);
                }
            }
            match call_from_value(Value::Object(map)) {
                Some(call) => Ok(vec![call]),
                None => Err(ParseError::new("object is not a function call", raw)),
            }
        }
        other => Err(ParseError::new(format!("unexpected JSON value {other}"), raw)),
    }
}

fn call_from_value(value: Value) -> Option<ToolCall> {
    let Value::Object(mut map) = value else {
        log::warn!("skipping non-object tool call entry");
        return None;
    };
    if let Some(Value::Object(function)) = map.remove("function") {
        return call_from_value(Value::Object(function));
    }
    let name = match map.remove("name") {
        Some(Value::String(name)) if !name.trim().is_empty() => name,
        _ => {
            log::warn!("skipping tool call entry without a name");
            return None;
        }
    };
    let args = map
        .remove("parameters")
        .or_else(|| map.remove("arguments"))
        .unwrap_or(Value::Null);
    let arguments = match args {
        Value::Null => BTreeMap::new(),
        Value::Object(obj) => obj.into_iter().collect(),
        Value::String(s) if s.trim().is_empty() => BTreeMap::new(),
        Value::String(s) => match serde_json::from_str::<BTreeMap<String, Value>>(&s) {
            Ok(args) => args,
            Err(_) => {
                log::warn!("skipping tool call '{name}' with unparsable arguments");
                return None;
            }
        },
        _ => {
            log::warn!("skipping tool call '{name}' with non-object arguments");
            return None;
        }
    };
    Some(ToolCall {
        name: name.trim().to_string(),
        arguments,
    })
}

/// Renders calls as the fenced JSON block the parser accepts.
pub fn format_tool_calls(calls: &[ToolCall]) -> String {
    let body = serde_json::to_string(calls).expect("tool calls serialize");
    format!("```json\n{body}\n```")
}
