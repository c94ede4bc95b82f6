//! Interactive terminal loop.

use std::io::{self, BufRead, Write};
use std::sync::Arc;

use npcforge::gateway::{Backend, BudgetProfile};
use npcforge::memory::{HashEmbedder, RetrievalIndex};
use npcforge::pipeline::{
    phase_strategies, run_turn, EventLog, EventSink, FanOut, PipelineEvent, Retrieval, RetrievalConfig, TurnConfig,
};
use npcforge::prompt::{StrategyId, TemplateSet};
use npcforge::toolbox::ToolRegistry;
use npcforge::world::{KnowledgeEntry, Session, WorldDefinition};

use crate::config::RunConfig;
use crate::CliError;

/// Everything a chat session needs besides the player's input.
pub struct ChatContext {
    pub session: Session,
    pub registry: ToolRegistry,
    pub knowledge: Vec<KnowledgeEntry>,
    pub backend: Arc<dyn Backend>,
    pub profile: BudgetProfile,
    pub templates: TemplateSet,
    pub index: Option<RetrievalIndex>,
    pub provider: HashEmbedder,
    pub retrieval: RetrievalConfig,
    pub history_window: usize,
    function_strategies: Vec<StrategyId>,
    dialogue_strategies: Vec<StrategyId>,
}

impl ChatContext {
    pub fn new(
        world: &WorldDefinition,
        npc_id: Option<&str>,
        scene_id: Option<&str>,
        session_id: &str,
        cfg: &RunConfig,
        backend: Arc<dyn Backend>,
    ) -> Result<Self, CliError> {
        let npc = match npc_id {
            Some(id) => world.npc(id).ok_or_else(|| CliError::Usage(format!("unknown npc '{id}'")))?,
            None => world.npcs.first().ok_or_else(|| CliError::Usage("world has no npcs".into()))?,
        };
        let scene = match scene_id {
            Some(id) => world.scene(id).ok_or_else(|| CliError::Usage(format!("unknown scene '{id}'")))?,
            None => world.scenes.first().ok_or_else(|| CliError::Usage("world has no scenes".into()))?,
        };
        let profile = cfg.profile()?;
        let session = Session::new(
            session_id,
            npc.clone(),
            world.world_state(scene),
            cfg.strategies.clone(),
            profile.id.clone(),
        );
        let (function_strategies, dialogue_strategies) = phase_strategies(&cfg.strategies);
        Ok(Self {
            registry: ToolRegistry::for_role(&npc.role),
            knowledge: world.knowledge_for(npc),
            session,
            backend,
            profile,
            templates: cfg.templates()?,
            index: cfg.index()?,
            provider: cfg.provider(),
            retrieval: cfg.retrieval.clone(),
            history_window: cfg.history_window,
            function_strategies,
            dialogue_strategies,
        })
    }

    pub fn turn_config<'a>(&'a self, events: Option<&'a dyn EventSink>) -> TurnConfig<'a> {
        TurnConfig {
            function_strategies: &self.function_strategies,
            dialogue_strategies: &self.dialogue_strategies,
            registry: &self.registry,
            knowledge: &self.knowledge,
            retrieval: self.index.as_ref().map(|index| Retrieval {
                index,
                provider: &self.provider,
                config: &self.retrieval,
            }),
            backend: &*self.backend,
            profile: &self.profile,
            templates: &self.templates,
            history_window: self.history_window,
            events,
        }
    }
}

/// One trace line per pipeline event.
pub fn trace_line(event: &PipelineEvent) -> String {
    let step = serde_json::to_value(event.step).expect("step serializes");
    format!("  [{}] {}", step.as_str().unwrap_or_default(), event.detail)
}

/// Reads player lines from `input` until EOF or `/quit`, writing NPC
/// replies to `out`. A failed turn is reported and the loop goes on with
/// the session unchanged. Returns the final session.
pub fn run_chat<R: BufRead, W: Write>(
    ctx: &ChatContext,
    input: R,
    out: &mut W,
    verbose: bool,
    events: Option<&dyn EventSink>,
) -> io::Result<Session> {
    let trace = EventLog::new();
    let mut sinks: Vec<&dyn EventSink> = vec![&trace];
    sinks.extend(events);
    let fan = FanOut(sinks);
    let cfg = ctx.turn_config(Some(&fan));
    let mut session = ctx.session.clone();
    writeln!(
        out,
        "Talking to {} ({}) at {}. Type /quit to leave.",
        session.npc.id, session.npc.role, session.world.location
    )?;
    for line in input.lines() {
        let line = line?;
        let text = line.trim();
        if text == "/quit" {
            break;
        }
        if text.is_empty() {
            continue;
        }
        match run_turn(&session, text, &cfg) {
            Ok((next, outcome)) => {
                session = next;
                writeln!(out, "{}: {}", session.npc.id, outcome.npc_text)?;
            }
            Err(failed) => writeln!(out, "! {failed}")?,
        }
        if verbose {
            for event in trace.events() {
                writeln!(out, "{}", trace_line(&event))?;
            }
        }
        trace.clear();
    }
    Ok(session)
}

#[cfg(test)]
mod tests {
    use super::*;
    use npcforge::gateway::{MockBackend, MockScript};

    fn ctx(script: MockScript) -> ChatContext {
        let cfg = RunConfig::default();
        let world = cfg.world().unwrap();
        ChatContext::new(&world, Some("merchant-bram"), None, "t", &cfg, Arc::new(MockBackend::new(script))).unwrap()
    }

    #[test]
    fn blank_lines_are_skipped() {
        let c = ctx(MockScript::from_texts(["[]", "Hello."]));
        let mut out = Vec::new();
        let s = run_chat(&c, "\n   \nhi\n".as_bytes(), &mut out, false, None).unwrap();
        assert_eq!(s.turns.len(), 2);
        assert!(String::from_utf8(out).unwrap().contains("merchant-bram: Hello."));
    }
}
