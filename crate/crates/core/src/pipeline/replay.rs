use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{phase_strategies, run_turn, EventSink, TurnConfig, TurnFailed, TurnOutcome, DEFAULT_HISTORY_WINDOW};
use crate::gateway::{BudgetProfile, MockBackend, MockScript};
use crate::prompt::TemplateSet;
use crate::toolbox::ToolRegistry;
use crate::world::{KnowledgeEntry, Session, SCHEMA_VERSION};

/// A session start state, the player lines to feed it and the scripted
/// backend replies that answer them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecording {
    pub schema_version: u32,
    pub session: Session,
    #[serde(default)]
    pub knowledge: Vec<KnowledgeEntry>,
    pub player_turns: Vec<String>,
    pub script: MockScript,
    #[serde(default)]
    pub native_tools: bool,
    #[serde(default = "default_window")]
    pub history_window: usize,
}

fn default_window() -> usize {
    DEFAULT_HISTORY_WINDOW
}

/// Final session plus the outcome of every replayed turn. Contains no
/// wall-clock data, so two replays serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub session: Session,
    pub outcomes: Vec<TurnOutcome>,
}

impl Transcript {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes") + "\n"
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("schema error at {field}: {message}")]
    Schema { field: String, message: String },
    #[error("invalid recording json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("turn {index} failed: {source}")]
    Turn {
        index: usize,
        #[source]
        source: Box<TurnFailed>,
    },
}

impl SessionRecording {
    pub fn from_json(text: &str) -> Result<Self, ReplayError> {
        let rec: SessionRecording = serde_json::from_str(text)?;
        let schema = |field: &str, message: String| ReplayError::Schema {
            field: field.into(),
            message,
        };
        if rec.schema_version != SCHEMA_VERSION {
            return Err(schema("schema_version", format!("unsupported version {}", rec.schema_version)));
        }
        if BudgetProfile::preset(&rec.session.budget_profile).is_none() {
            return Err(schema(
                "session.budget_profile",
                format!("unknown profile '{}'", rec.session.budget_profile),
            ));
        }
        if let Some(i) = rec.player_turns.iter().position(|t| t.trim().is_empty()) {
            return Err(schema(&format!("player_turns[{i}]"), "must be non-empty".into()));
        }
        Ok(rec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReplayError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Replays `rec` against a fresh mock backend built from its script.
pub fn replay_recording(
    rec: &SessionRecording,
    templates: &TemplateSet,
    events: Option<&dyn EventSink>,
) -> Result<Transcript, ReplayError> {
    let profile = BudgetProfile::preset(&rec.session.budget_profile).ok_or_else(|| ReplayError::Schema {
        field: "session.budget_profile".into(),
        message: format!("unknown profile '{}'", rec.session.budget_profile),
    })?;
    let mut backend = MockBackend::new(rec.script.clone());
    if rec.native_tools {
        backend = backend.with_native_tools();
    }
    let registry = ToolRegistry::for_role(&rec.session.npc.role);
    let (function_strategies, dialogue_strategies) = phase_strategies(&rec.session.strategy_set);
    let cfg = TurnConfig {
        function_strategies: &function_strategies,
        dialogue_strategies: &dialogue_strategies,
        registry: &registry,
        knowledge: &rec.knowledge,
        retrieval: None,
        backend: &backend,
        profile: &profile,
        templates,
        history_window: rec.history_window,
        events,
    };
    let mut session = rec.session.clone();
    let mut outcomes = Vec::with_capacity(rec.player_turns.len());
    for (index, text) in rec.player_turns.iter().enumerate() {
        let (next, outcome) = run_turn(&session, text, &cfg).map_err(|e| ReplayError::Turn {
            index,
            source: Box::new(e),
        })?;
        session = next;
        outcomes.push(outcome);
    }
    Ok(Transcript { session, outcomes })
}

/// Replays a recording file with the built-in templates.
pub fn replay(path: impl AsRef<Path>) -> Result<Vec<TurnOutcome>, ReplayError> {
    let rec = SessionRecording::load(path)?;
    Ok(replay_recording(&rec, &TemplateSet::builtin(), None)?.outcomes)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Difference {
    pub turn: usize,
    pub field: &'static str,
    pub expected: String,
    pub actual: String,
}

/// Field-by-field differences between two outcome lists.
pub fn compare_outcomes(expected: &[TurnOutcome], actual: &[TurnOutcome]) -> Vec<Difference> {
    fn show<T: Serialize>(v: &T) -> String {
        serde_json::to_string(v).expect("serializes")
    }
    let mut diffs = Vec::new();
    if expected.len() != actual.len() {
        diffs.push(Difference {
            turn: expected.len().min(actual.len()),
            field: "turn_count",
            expected: expected.len().to_string(),
            actual: actual.len().to_string(),
        });
    }
    for (turn, (e, a)) in expected.iter().zip(actual).enumerate() {
        let mut check = |field: &'static str, x: String, y: String| {
            if x != y {
                diffs.push(Difference {
                    turn,
                    field,
                    expected: x,
                    actual: y,
                });
            }
        };
        check("npc_text", e.npc_text.clone(), a.npc_text.clone());
        check("tool_calls", show(&e.tool_calls), show(&a.tool_calls));
        check("tool_results", show(&e.tool_results), show(&a.tool_results));
        check("function_prompt", show(&e.function_prompt), show(&a.function_prompt));
        check("dialogue_prompt", show(&e.dialogue_prompt), show(&a.dialogue_prompt));
        check("ledger", show(&e.ledger), show(&a.ledger));
        check("retrieval_hits", show(&e.retrieval_hits), show(&a.retrieval_hits));
        check("refine", show(&e.refine), show(&a.refine));
    }
    diffs
}
