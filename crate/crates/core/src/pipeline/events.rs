use std::io::Write;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Pipeline steps in the order a successful turn emits them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    TurnStarted,
    Retrieval,
    FunctionPromptComposed,
    FunctionCompletion,
    ToolCallsParsed,
    ToolCallDropped,
    ToolExecuted,
    DialoguePromptComposed,
    DialogueCompletion,
    Refine,
    TurnCompleted,
    TurnFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineEvent {
    /// Milliseconds since the Unix epoch.
    pub ts: u64,
    pub session: String,
    pub step: Step,
    #[serde(default)]
    pub detail: Value,
}

impl PipelineEvent {
    pub fn new(session: &str, step: Step, detail: Value) -> Self {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64);
        Self {
            ts,
            session: session.to_string(),
            step,
            detail,
        }
    }
}

pub trait EventSink: Send + Sync {
    fn record(&self, event: PipelineEvent);
}

/// Keeps events in memory.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Mutex<Vec<PipelineEvent>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<PipelineEvent> {
        self.events.lock().expect("event log poisoned").clone()
    }

    pub fn steps(&self) -> Vec<Step> {
        self.events().into_iter().map(|e| e.step).collect()
    }

    pub fn clear(&self) {
        self.events.lock().expect("event log poisoned").clear();
    }
}

impl EventSink for EventLog {
    fn record(&self, event: PipelineEvent) {
        self.events.lock().expect("event log poisoned").push(event);
    }
}

/// Writes one JSON object per line.
pub struct JsonlSink {
    out: Mutex<Box<dyn Write + Send>>,
}

impl JsonlSink {
    pub fn new(out: impl Write + Send + 'static) -> Self {
        Self {
            out: Mutex::new(Box::new(out)),
        }
    }
}

impl EventSink for JsonlSink {
    fn record(&self, event: PipelineEvent) {
        let mut out = self.out.lock().expect("event sink poisoned");
        let line = serde_json::to_string(&event).expect("event serializes");
        if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
            log::warn!("cannot write event: {e}");
        }
    }
}

/// Forwards to several sinks.
pub struct FanOut<'a>(pub Vec<&'a dyn EventSink>);

impl EventSink for FanOut<'_> {
    fn record(&self, event: PipelineEvent) {
        for sink in &self.0 {
            sink.record(event.clone());
        }
    }
}

/// Checks that the steps of one turn follow the pipeline order: function
/// prompt before any completion or tool, tools before the dialogue prompt,
/// dialogue completion before refinement, and a single terminal step.
pub fn check_turn_order(steps: &[Step]) -> Result<(), String> {
    let pos = |s: Step| steps.iter().position(|&x| x == s);
    let last = |s: Step| steps.iter().rposition(|&x| x == s);
    if steps.first() != Some(&Step::TurnStarted) {
        return Err("turn does not start with turn_started".into());
    }
    let terminal = steps.iter().filter(|s| matches!(s, Step::TurnCompleted | Step::TurnFailed)).count();
    if terminal != 1 || !matches!(steps.last(), Some(Step::TurnCompleted | Step::TurnFailed)) {
        return Err("turn must end with exactly one terminal step".into());
    }
    let before = |a: Step, b: Step| match (last(a), pos(b)) {
        (Some(x), Some(y)) if x > y => Err(format!("{a:?} after {b:?}")),
        _ => Ok(()),
    };
    before(Step::FunctionPromptComposed, Step::FunctionCompletion)?;
    before(Step::FunctionPromptComposed, Step::ToolExecuted)?;
    before(Step::FunctionCompletion, Step::ToolCallsParsed)?;
    before(Step::ToolCallsParsed, Step::ToolExecuted)?;
    before(Step::ToolExecuted, Step::DialoguePromptComposed)?;
    before(Step::ToolCallDropped, Step::DialoguePromptComposed)?;
    before(Step::DialoguePromptComposed, Step::DialogueCompletion)?;
    before(Step::DialogueCompletion, Step::Refine)?;
    if steps.last() == Some(&Step::TurnCompleted) {
        for required in [
            Step::FunctionPromptComposed,
            Step::FunctionCompletion,
            Step::ToolCallsParsed,
            Step::DialoguePromptComposed,
            Step::DialogueCompletion,
        ] {
            if pos(required).is_none() {
                return Err(format!("completed turn is missing {required:?}"));
            }
        }
    }
    Ok(())
}

/// Splits a session's events into per-turn groups at each `turn_started`.
pub fn split_turns(events: &[PipelineEvent]) -> Vec<Vec<Step>> {
    let mut turns: Vec<Vec<Step>> = Vec::new();
    for e in events {
        if e.step == Step::TurnStarted || turns.is_empty() {
            turns.push(Vec::new());
        }
        turns.last_mut().expect("non-empty").push(e.step);
    }
    turns
}
