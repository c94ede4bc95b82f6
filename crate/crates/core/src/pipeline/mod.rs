//! One player utterance through the two-call pipeline: function selection,
//! tool execution, dialogue generation and an optional length rewrite.

mod events;
mod replay;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::gateway::{complete, Backend, BudgetProfile, CallLedger, CompletionRequest, GatewayError, LedgerSnapshot};
use crate::memory::{
    inject, refine, EmbeddingProvider, Hit, MemoryError, RefineConfig, RefineOutcome, RetrievalIndex, Stage,
    DEFAULT_K, DEFAULT_MIN_SIM,
};
use crate::prompt::{slot, ChatMessage, Phase, PromptError, PromptPlan, RenderedPrompt, StrategyId, TemplateSet};
use crate::text::{approx_token_count, truncate_tokens};
use crate::toolbox::{execute, parse_tool_calls, validate_call, ToolCall, ToolRegistry, ToolResult, ToolStatus};
use crate::world::{render_character_setting, DialogueTurn, KnowledgeEntry, Session, WorldError};

pub use events::{check_turn_order, split_turns, EventLog, EventSink, FanOut, JsonlSink, PipelineEvent, Step};
pub use replay::{compare_outcomes, replay, replay_recording, Difference, ReplayError, SessionRecording, Transcript};

pub const DEFAULT_HISTORY_WINDOW: usize = 6;
/// Output cap requested for the function-selection call.
pub const FUNCTION_MAX_OUTPUT: usize = 120;
/// Output cap requested for the dialogue call.
pub const DIALOGUE_MAX_OUTPUT: usize = 160;

/// Text used to query the retrieval index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKey {
    #[default]
    LastPlayerUtterance,
    /// The visible history window plus the current utterance.
    FullHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub min_sim: f64,
    pub key: QueryKey,
    /// Enables the rewrite step when set.
    pub refine: Option<RefineConfig>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            min_sim: DEFAULT_MIN_SIM,
            key: QueryKey::default(),
            refine: None,
        }
    }
}

#[derive(Clone, Copy)]
pub struct Retrieval<'a> {
    pub index: &'a RetrievalIndex,
    pub provider: &'a dyn EmbeddingProvider,
    pub config: &'a RetrievalConfig,
}

/// Everything one turn needs besides the session.
#[derive(Clone, Copy)]
pub struct TurnConfig<'a> {
    pub function_strategies: &'a [StrategyId],
    pub dialogue_strategies: &'a [StrategyId],
    pub registry: &'a ToolRegistry,
    /// Knowledge the NPC holds; its bodies form the general knowledge block
    /// and back tool execution.
    pub knowledge: &'a [KnowledgeEntry],
    pub retrieval: Option<Retrieval<'a>>,
    pub backend: &'a dyn Backend,
    pub profile: &'a BudgetProfile,
    pub templates: &'a TemplateSet,
    pub history_window: usize,
    pub events: Option<&'a dyn EventSink>,
}

/// Splits a session's strategy set into the function-phase and
/// dialogue-phase plans, keeping only strategies each phase accepts.
pub fn phase_strategies(set: &[StrategyId]) -> (Vec<StrategyId>, Vec<StrategyId>) {
    let pick = |phase| set.iter().copied().filter(|s| s.allowed_in(phase)).collect();
    (pick(Phase::FunctionPhase), pick(Phase::DialoguePhase))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedHit {
    pub id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievalHits {
    pub function_selection: Vec<RetrievedHit>,
    pub dialogue_drafting: Vec<RetrievedHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub npc_text: String,
    pub tool_calls: Vec<ToolCall>,
    pub tool_results: Vec<ToolResult>,
    pub function_prompt: RenderedPrompt,
    pub dialogue_prompt: RenderedPrompt,
    pub ledger: LedgerSnapshot,
    pub retrieval_hits: RetrievalHits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<RefineOutcome>,
}

/// Whatever a failed turn produced before it stopped.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PartialTurn {
    pub function_prompt: Option<RenderedPrompt>,
    pub tool_calls: Vec<ToolCall>,
    pub tool_results: Vec<ToolResult>,
    pub dialogue_prompt: Option<RenderedPrompt>,
    pub draft: Option<String>,
    pub ledger: LedgerSnapshot,
}

#[derive(Debug, Error)]
pub enum TurnError {
    #[error("player text is empty")]
    EmptyPlayerText,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Error)]
#[error("turn failed: {error}")]
pub struct TurnFailed {
    pub error: TurnError,
    pub partial: PartialTurn,
}

impl TurnFailed {
    pub fn is_timeout(&self) -> bool {
        matches!(self.error, TurnError::Gateway(GatewayError::Timeout { .. }))
    }
}

struct Run<'a> {
    cfg: &'a TurnConfig<'a>,
    session_id: &'a str,
    ledger: CallLedger,
    partial: PartialTurn,
}

impl Run<'_> {
    fn emit(&self, step: Step, detail: serde_json::Value) {
        if let Some(sink) = self.cfg.events {
            sink.record(PipelineEvent::new(self.session_id, step, detail));
        }
    }

    fn fail(mut self, error: impl Into<TurnError>) -> TurnFailed {
        let error = error.into();
        self.partial.ledger = self.ledger.snapshot();
        self.emit(Step::TurnFailed, json!({ "error": error.to_string() }));
        TurnFailed {
            error,
            partial: self.partial,
        }
    }
}

/// Composes `plan`, then shrinks it until it fits `limit` tokens: general
/// knowledge first, then function knowledge, then the oldest history
/// messages. Instructions are never cut. Returns the prompt and the list of
/// what was trimmed.
fn fit_prompt(
    templates: &TemplateSet,
    mut plan: PromptPlan,
    limit: Option<usize>,
) -> Result<(RenderedPrompt, Vec<&'static str>), PromptError> {
    let mut trimmed = Vec::new();
    loop {
        let prompt = templates.compose(&plan)?;
        let Some(limit) = limit else {
            return Ok((prompt, trimmed));
        };
        if prompt.approx_tokens <= limit {
            return Ok((prompt, trimmed));
        }
        let excess = prompt.approx_tokens - limit;
        let shrinkable = [slot::GENERAL_KNOWLEDGE, slot::FUNCTION_KNOWLEDGE]
            .into_iter()
            .find(|name| plan.slots.get(*name).is_some_and(|v| approx_token_count(v) > 0));
        if let Some(name) = shrinkable {
            let value = &plan.slots[name];
            let keep = approx_token_count(value).saturating_sub(excess);
            let cut = truncate_tokens(value, keep).to_string();
            plan.slots.insert(name.to_string(), cut);
            if trimmed.last() != Some(&name) {
                trimmed.push(name);
            }
        } else if plan.history.len() > 1 {
            plan.history.remove(0);
            if trimmed.last() != Some(&slot::DIALOGUE_HISTORY) {
                trimmed.push(slot::DIALOGUE_HISTORY);
            }
        } else {
            // Nothing left to cut; the gateway reports the overrun.
            return Ok((prompt, trimmed));
        }
    }
}

fn base_plan(phase: Phase, strategies: &[StrategyId], session: &Session, cfg: &TurnConfig<'_>) -> PromptPlan {
    let mut general: Vec<&KnowledgeEntry> = cfg.knowledge.iter().collect();
    general.sort_by(|a, b| a.id.cmp(&b.id));
    let general = general.iter().map(|k| k.body.as_str()).collect::<Vec<_>>().join("\n");
    PromptPlan::new(phase, strategies.to_vec())
        .with_slot(slot::CHARACTER_SETTING, render_character_setting(&session.npc, &session.world))
        .with_slot(slot::WORLDVIEW, session.world.worldview_text.clone())
        .with_slot(slot::FORMATTED_TOOLS, cfg.registry.formatted_tools())
        .with_slot(slot::GENERAL_KNOWLEDGE, general)
        .with_slot(slot::FUNCTION_KNOWLEDGE, "")
}

/// Text handed to the dialogue prompt for each tool result.
fn result_text(result: &ToolResult) -> String {
    match (&result.status, &result.knowledge) {
        (ToolStatus::Ok, Some(k)) => k.body.clone(),
        _ => format!(
            "{}: {}",
            result.call.name,
            result.message.as_deref().unwrap_or("no result")
        ),
    }
}

fn hit_summary(hits: &[Hit<'_>]) -> Vec<RetrievedHit> {
    hits.iter()
        .map(|h| RetrievedHit {
            id: h.record.id.clone(),
            similarity: h.similarity,
        })
        .collect()
}

/// Runs one utterance through the pipeline and returns the session with
/// the player and NPC turns appended. On failure the input session is
/// untouched and the error carries whatever was produced.
pub fn run_turn(
    session: &Session,
    player_text: &str,
    cfg: &TurnConfig<'_>,
) -> Result<(Session, TurnOutcome), TurnFailed> {
    let ts = session.next_timestamp();
    let mut run = Run {
        cfg,
        session_id: &session.id,
        ledger: CallLedger::new(format!("{}#{ts}", session.id)),
        partial: PartialTurn::default(),
    };
    run.emit(
        Step::TurnStarted,
        json!({ "utterance": run.ledger.utterance_id(), "player_text": player_text }),
    );
    let player_text = player_text.trim();
    if player_text.is_empty() {
        return Err(run.fail(TurnError::EmptyPlayerText));
    }
    let with_player = match session.append_turn(DialogueTurn::player(player_text, ts)) {
        Ok(s) => s,
        Err(e) => return Err(run.fail(e)),
    };

    let window_start = session.turns.len().saturating_sub(cfg.history_window);
    let history: Vec<ChatMessage> = with_player.turns[window_start..]
        .iter()
        .map(|t| ChatMessage {
            speaker: t.speaker,
            text: t.text.clone(),
        })
        .collect();

    // Retrieval, shared by both stages.
    let mut hits: Vec<Hit<'_>> = Vec::new();
    if let Some(r) = cfg.retrieval {
        let query = match r.config.key {
            QueryKey::LastPlayerUtterance => player_text.to_string(),
            QueryKey::FullHistory => history.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n"),
        };
        let found = r
            .provider
            .embed(&query)
            .and_then(|q| r.index.retrieve(&q, r.config.k, r.config.min_sim));
        match found {
            Ok(found) => hits = found,
            Err(e) => return Err(run.fail(e)),
        }
        run.emit(Step::Retrieval, json!({ "hits": hit_summary(&hits) }));
    }
    let input_limit = cfg.profile.effective_input_limit();

    // Step 1: function-selection prompt.
    let mut plan = base_plan(Phase::FunctionPhase, cfg.function_strategies, session, cfg);
    plan.history = history.clone();
    if !hits.is_empty() {
        plan = match inject(Stage::FunctionSelection, plan, &hits) {
            Ok(p) => p,
            Err(e) => return Err(run.fail(e)),
        };
    }
    let (function_prompt, trimmed) = match fit_prompt(cfg.templates, plan, input_limit) {
        Ok(p) => p,
        Err(e) => return Err(run.fail(e)),
    };
    run.emit(
        Step::FunctionPromptComposed,
        json!({ "approx_tokens": function_prompt.approx_tokens, "trimmed": trimmed }),
    );
    run.partial.function_prompt = Some(function_prompt.clone());

    // Step 2: first call.
    let request = CompletionRequest {
        rendered: function_prompt.clone(),
        tool_schemas: Some(cfg.registry.schemas().cloned().collect()),
        max_output_tokens: FUNCTION_MAX_OUTPUT,
        phase: Phase::FunctionPhase,
    };
    let response = match complete(cfg.backend, &request, &mut run.ledger, cfg.profile) {
        Ok(r) => r,
        Err(e) => return Err(run.fail(e)),
    };
    run.emit(
        Step::FunctionCompletion,
        json!({ "text": response.text, "output_tokens": response.output_tokens }),
    );
    let (parsed, source) = match response.native_tool_calls {
        Some(calls) => (calls, "native"),
        None => match parse_tool_calls(&response.text) {
            Ok(calls) => (calls, "text"),
            Err(e) => {
                log::warn!("function output unparseable, continuing without calls: {}", e.message);
                (Vec::new(), "unparseable")
            }
        },
    };
    run.emit(Step::ToolCallsParsed, json!({ "count": parsed.len(), "source": source }));

    // Step 3: validate and execute.
    let mut validated = Vec::with_capacity(parsed.len());
    for call in parsed {
        match validate_call(cfg.registry, call.clone()) {
            Ok(v) => validated.push(v),
            Err(e) => {
                log::warn!("dropping invalid tool call {}: {e}", call.name);
                run.emit(Step::ToolCallDropped, json!({ "call": call, "error": e.to_string() }));
            }
        }
    }
    for call in &validated {
        let result = execute(cfg.registry, call, cfg.knowledge);
        run.emit(
            Step::ToolExecuted,
            json!({ "name": result.call.name, "status": result.status }),
        );
        run.partial.tool_calls.push(result.call.clone());
        run.partial.tool_results.push(result);
    }

    // Step 4: dialogue prompt.
    let function_knowledge = run.partial.tool_results.iter().map(result_text).collect::<Vec<_>>().join("\n");
    let mut plan = base_plan(Phase::DialoguePhase, cfg.dialogue_strategies, session, cfg)
        .with_slot(slot::FUNCTION_KNOWLEDGE, function_knowledge);
    plan.history = history;
    if !hits.is_empty() {
        plan = match inject(Stage::DialogueDrafting, plan, &hits) {
            Ok(p) => p,
            Err(e) => return Err(run.fail(e)),
        };
    }
    let (dialogue_prompt, trimmed) = match fit_prompt(cfg.templates, plan, input_limit) {
        Ok(p) => p,
        Err(e) => return Err(run.fail(e)),
    };
    run.emit(
        Step::DialoguePromptComposed,
        json!({ "approx_tokens": dialogue_prompt.approx_tokens, "trimmed": trimmed }),
    );
    run.partial.dialogue_prompt = Some(dialogue_prompt.clone());

    // Step 5: second call.
    let request = CompletionRequest {
        rendered: dialogue_prompt.clone(),
        tool_schemas: None,
        max_output_tokens: DIALOGUE_MAX_OUTPUT,
        phase: Phase::DialoguePhase,
    };
    let response = match complete(cfg.backend, &request, &mut run.ledger, cfg.profile) {
        Ok(r) => r,
        Err(e) => return Err(run.fail(e)),
    };
    let draft = response.text.trim().to_string();
    run.emit(
        Step::DialogueCompletion,
        json!({ "text": draft, "output_tokens": response.output_tokens }),
    );
    run.partial.draft = Some(draft.clone());

    let mut refined = None;
    if let (Some(r), Some(best)) = (cfg.retrieval, hits.first()) {
        if let Some(refine_cfg) = &r.config.refine {
            let outcome = match refine(&draft, *best, refine_cfg, cfg.templates, cfg.backend, &mut run.ledger, cfg.profile) {
                Ok(o) => o,
                Err(e) => return Err(run.fail(e)),
            };
            run.emit(Step::Refine, serde_json::to_value(&outcome).expect("outcome serializes"));
            refined = Some(outcome);
        }
    }
    let npc_text = refined.as_ref().map_or_else(|| draft.clone(), |o| o.final_text(&draft));

    let npc_turn = DialogueTurn::npc(
        npc_text.clone(),
        run.partial.tool_calls.clone(),
        run.partial.tool_results.clone(),
        ts + 1,
    );
    let next = match with_player.append_turn(npc_turn) {
        Ok(s) => s,
        Err(e) => return Err(run.fail(e)),
    };
    let ledger = run.ledger.snapshot();
    run.emit(
        Step::TurnCompleted,
        json!({ "calls_made": ledger.calls_made, "tokens_in": ledger.token_in_total, "tokens_out": ledger.token_out_total }),
    );
    let summary = hit_summary(&hits);
    Ok((
        next,
        TurnOutcome {
            npc_text,
            tool_calls: run.partial.tool_calls,
            tool_results: run.partial.tool_results,
            function_prompt,
            dialogue_prompt,
            ledger,
            retrieval_hits: RetrievalHits {
                function_selection: summary.clone(),
                dialogue_drafting: summary,
            },
            refine: refined,
        },
    ))
}
