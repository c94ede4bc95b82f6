//! Task datasets: loading, validation, statistics and synthetic generation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{complete, Backend, BudgetProfile, CallLedger, CompletionRequest, GatewayError};
use crate::memory::RecordInput;
use crate::prompt::{ChatMessage, Phase, RenderedPrompt, TemplateSet};
use crate::toolbox::{parse_tool_calls, validate_call, ParseError, ToolCall, ToolRegistry};
use crate::world::{DialogueTurn, KnowledgeEntry, NpcProfile, Session, Speaker, WorldError, WorldState, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("schema error at {field}: {message}")]
    Schema { field: String, message: String },
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Version(u64),
    #[error("invalid corpus json at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("generation produced {valid} of {wanted} valid instances in {attempts} attempts")]
    GenerationExhausted {
        valid: usize,
        wanted: usize,
        attempts: usize,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl CorpusError {
    fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Schema {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for CorpusError {
    fn from(e: serde_json::Error) -> Self {
        Self::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

/// Which gold fields a corpus carries: 1 = function calls, 2 = responses,
/// 3 = both.
pub type TaskKind = u8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub npc: NpcProfile,
    pub world: WorldState,
    /// Earlier turns, alternating and starting with the player.
    #[serde(default)]
    pub history: Vec<DialogueTurn>,
    pub player_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_functions: Option<Vec<ToolCall>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_response: Option<String>,
    /// Auxiliary NPC reasoning from generated data; never scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    /// Knowledge available to the NPC's tools and prompts.
    #[serde(default)]
    pub knowledge: Vec<KnowledgeEntry>,
}

impl TaskInstance {
    /// A session holding the instance history, ready for the next player turn.
    pub fn session(&self, strategies: Vec<crate::prompt::StrategyId>, budget_profile: &str) -> Result<Session, WorldError> {
        let mut session = Session::new(self.id.clone(), self.npc.clone(), self.world.clone(), strategies, budget_profile);
        for turn in &self.history {
            session = session.append_turn(turn.clone())?;
        }
        Ok(session)
    }

    fn validate(&self, task: TaskKind, field: &str) -> Result<(), CorpusError> {
        let world_err = |e: WorldError| match e {
            WorldError::Schema { field: f, message } => CorpusError::schema(format!("{field}.{f}"), message),
            other => CorpusError::schema(format!("{field}.history"), other.to_string()),
        };
        if self.id.trim().is_empty() {
            return Err(CorpusError::schema(format!("{field}.id"), "must be non-empty"));
        }
        self.npc.validate("npc").map_err(world_err)?;
        self.world.validate("world").map_err(world_err)?;
        if self.player_text.trim().is_empty() {
            return Err(CorpusError::schema(format!("{field}.player_text"), "must be non-empty"));
        }
        if let Some(last) = self.history.last() {
            if last.speaker != Speaker::Npc {
                return Err(CorpusError::schema(format!("{field}.history"), "must end with an NPC turn"));
            }
        }
        self.session(Vec::new(), "").map_err(world_err)?;
        if matches!(task, 1 | 3) && self.gold_functions.is_none() {
            return Err(CorpusError::schema(format!("{field}.gold_functions"), format!("required for task {task}")));
        }
        if matches!(task, 2 | 3) && self.gold_response.as_deref().is_none_or(|r| r.trim().is_empty()) {
            return Err(CorpusError::schema(format!("{field}.gold_response"), format!("required for task {task}")));
        }
        let mut ids = BTreeSet::new();
        for (i, k) in self.knowledge.iter().enumerate() {
            if !ids.insert(k.id.as_str()) {
                return Err(CorpusError::schema(format!("{field}.knowledge[{i}].id"), "duplicate id"));
            }
            if k.body.trim().is_empty() {
                return Err(CorpusError::schema(format!("{field}.knowledge[{i}].body"), "must be non-empty"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub schema_version: u32,
    pub task: TaskKind,
    pub instances: Vec<TaskInstance>,
}

impl Corpus {
    pub fn new(task: TaskKind, instances: Vec<TaskInstance>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            task,
            instances,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let raw: Value = serde_json::from_str(text)?;
        let version = raw
            .get("schema_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| CorpusError::schema("schema_version", "missing or not an integer"))?;
        if version != u64::from(SCHEMA_VERSION) {
            return Err(CorpusError::Version(version));
        }
        // Parse from text so field errors keep their line numbers.
        let corpus: Corpus = serde_json::from_str(text)?;
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(1..=3).contains(&self.task) {
            return Err(CorpusError::schema("task", format!("{} is not 1, 2 or 3", self.task)));
        }
        let mut ids = BTreeSet::new();
        for (i, inst) in self.instances.iter().enumerate() {
            let field = format!("instances[{i}]");
            if !ids.insert(inst.id.as_str()) {
                return Err(CorpusError::schema(format!("{field}.id"), format!("duplicate id '{}'", inst.id)));
            }
            inst.validate(self.task, &field)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Retrieval records for every instance with a gold response.
    pub fn record_inputs(&self, source: &str) -> Vec<RecordInput> {
        self.instances
            .iter()
            .filter_map(|inst| {
                let npc_text = inst.gold_response.clone()?;
                Some(RecordInput {
                    id: inst.id.clone(),
                    player_text: inst.player_text.clone(),
                    npc_text,
                    gold_functions: inst.gold_functions.clone(),
                    source: source.to_string(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub by_role: BTreeMap<String, usize>,
    pub by_season: BTreeMap<String, usize>,
    pub by_weather: BTreeMap<String, usize>,
    pub with_gold_functions: usize,
    pub function_presence_ratio: f64,
    pub mean_history_turns: f64,
}

/// Counts by role, season and weather plus the share of instances with at
/// least one gold function call.
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut by_role = BTreeMap::new();
    let mut by_season = BTreeMap::new();
    let mut by_weather = BTreeMap::new();
    let mut with_gold_functions = 0;
    let mut history = 0;
    for inst in &corpus.instances {
        *by_role.entry(inst.npc.role.key()).or_insert(0) += 1;
        *by_season.entry(inst.world.season.key().to_string()).or_insert(0) += 1;
        *by_weather.entry(inst.world.weather.clone()).or_insert(0) += 1;
        if inst.gold_functions.as_ref().is_some_and(|g| !g.is_empty()) {
            with_gold_functions += 1;
        }
        history += inst.history.len();
    }
    let total = corpus.len();
    let ratio = |n: usize| if total == 0 { 0.0 } else { n as f64 / total as f64 };
    CorpusStats {
        total,
        by_role,
        by_season,
        by_weather,
        with_gold_functions,
        function_presence_ratio: ratio(with_gold_functions),
        mean_history_turns: ratio(history),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenerationKind {
    MultiTurn,
    MultiTurnReasoning,
    FunctionCalling,
}

impl GenerationKind {
    /// Counts used for the full-size synthetic sets.
    pub fn default_count(self) -> usize {
        match self {
            GenerationKind::MultiTurn | GenerationKind::MultiTurnReasoning => 2800,
            GenerationKind::FunctionCalling => 328,
        }
    }

    pub fn default_template(self) -> &'static str {
        match self {
            GenerationKind::MultiTurn | GenerationKind::MultiTurnReasoning => "datagen/multi_turn",
            GenerationKind::FunctionCalling => "datagen/function_calling",
        }
    }

    /// Task kind of the produced corpus.
    pub fn task(self) -> TaskKind {
        match self {
            GenerationKind::FunctionCalling => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSpec {
    pub kind: GenerationKind,
    pub count: usize,
    #[serde(default)]
    pub template_id: Option<String>,
    /// Failed generations tolerated before giving up.
    #[serde(default = "default_retry_cap")]
    pub retry_cap: usize,
    /// Exchanges per multi-turn dialogue.
    #[serde(default = "default_turns")]
    pub turn_count: usize,
}

fn default_retry_cap() -> usize {
    3
}

fn default_turns() -> usize {
    2
}

impl GenerationSpec {
    pub fn new(kind: GenerationKind, count: usize) -> Self {
        Self {
            kind,
            count,
            template_id: None,
            retry_cap: default_retry_cap(),
            turn_count: default_turns(),
        }
    }
}

/// Generation is not held to the competition budgets.
pub fn generation_profile() -> BudgetProfile {
    BudgetProfile {
        id: "generation".into(),
        turn_timeout_ms: 120_000,
        ..BudgetProfile::gpu_track()
    }
}

/// NPC and scene every generated instance is grounded in.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationContext {
    pub npc: NpcProfile,
    pub world: WorldState,
    pub registry: ToolRegistry,
    pub knowledge: Vec<KnowledgeEntry>,
}

fn call_backend(
    backend: &dyn Backend,
    system_text: String,
    profile: &BudgetProfile,
    id: &str,
) -> Result<String, GatewayError> {
    let request = CompletionRequest {
        rendered: RenderedPrompt::new(system_text, Vec::<ChatMessage>::new()),
        tool_schemas: None,
        max_output_tokens: 1024,
        phase: Phase::DialoguePhase,
    };
    let mut ledger = CallLedger::new(id);
    Ok(complete(backend, &request, &mut ledger, profile)?.text)
}

/// First JSON value in `raw`, looking inside a fenced block when present.
fn json_payload(raw: &str) -> Option<Value> {
    let body = match raw.find("```") {
        Some(open) => {
            let after = &raw[open + 3..];
            let start = after.find('\n')? + 1;
            let end = after[start..].find("```")?;
            &after[start..start + end]
        }
        None => &raw[raw.find(['{', '['])?..],
    };
    serde_json::Deserializer::from_str(body)
        .into_iter::<Value>()
        .next()?
        .ok()
}

/// Produces exactly `spec.count` valid instances, discarding generations
/// that fail to parse or validate, up to `spec.retry_cap` failures.
pub fn generate_instances(
    spec: &GenerationSpec,
    ctx: &GenerationContext,
    templates: &TemplateSet,
    backend: &dyn Backend,
    profile: &BudgetProfile,
) -> Result<Vec<TaskInstance>, CorpusError> {
    if spec.count == 0 {
        return Err(CorpusError::Precondition("generation count must be at least 1".into()));
    }
    let template_id = spec.template_id.as_deref().unwrap_or(spec.kind.default_template());
    let template = templates
        .get(template_id)
        .ok_or_else(|| CorpusError::Precondition(format!("template '{template_id}' not found")))?;
    let knowledge_text = ctx
        .knowledge
        .iter()
        .map(|k| k.body.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let slots: BTreeMap<String, String> = [
        ("npc_role", ctx.npc.role.to_string()),
        ("npc_persona", ctx.npc.persona_text.clone()),
        ("formatted_tools", ctx.registry.formatted_tools()),
        ("knowledge", knowledge_text),
        ("turn_count", spec.turn_count.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let prompt = template
        .render(&slots)
        .map_err(|e| CorpusError::Precondition(e.to_string()))?;

    let mut out = Vec::with_capacity(spec.count);
    let mut failures = 0;
    let mut attempts = 0;
    while out.len() < spec.count {
        attempts += 1;
        let id = format!("gen-{:?}-{}", spec.kind, out.len()).to_lowercase();
        let raw = call_backend(backend, prompt.clone(), profile, &id)?;
        let produced = match spec.kind {
            GenerationKind::FunctionCalling => function_instance(&raw, ctx, &id),
            GenerationKind::MultiTurn | GenerationKind::MultiTurnReasoning => dialogue_instance(&raw, ctx, &id),
        };
        let produced = match (produced, spec.kind) {
            (Ok(mut inst), GenerationKind::MultiTurnReasoning) => {
                reasoning_for(&mut inst, templates, backend, profile).map(|_| inst)
            }
            (other, _) => other,
        };
        match produced {
            Ok(inst) => out.push(inst),
            Err(reason) => {
                log::warn!("discarding generation {attempts}: {reason}");
                failures += 1;
                if failures > spec.retry_cap {
                    return Err(CorpusError::GenerationExhausted {
                        valid: out.len(),
                        wanted: spec.count,
                        attempts,
                    });
                }
            }
        }
    }
    Ok(out)
}

fn base_instance(ctx: &GenerationContext, id: &str, player_text: String) -> TaskInstance {
    TaskInstance {
        id: id.to_string(),
        npc: ctx.npc.clone(),
        world: ctx.world.clone(),
        history: Vec::new(),
        player_text,
        gold_functions: None,
        gold_response: None,
        reasoning: None,
        knowledge: ctx.knowledge.clone(),
    }
}

fn function_instance(raw: &str, ctx: &GenerationContext, id: &str) -> Result<TaskInstance, String> {
    let payload = json_payload(raw).ok_or("no JSON object in output")?;
    let player = payload
        .get("player_dialogue")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or("player_dialogue missing or empty")?;
    let calls = parse_tool_calls(&payload.to_string()).map_err(|e| e.message)?;
    let mut validated = Vec::with_capacity(calls.len());
    for call in calls {
        validated.push(validate_call(&ctx.registry, call).map_err(|e| e.to_string())?.into_inner());
    }
    let mut inst = base_instance(ctx, id, player.to_string());
    inst.gold_functions = Some(validated);
    Ok(inst)
}

fn dialogue_instance(raw: &str, ctx: &GenerationContext, id: &str) -> Result<TaskInstance, String> {
    let payload = json_payload(raw).ok_or("no JSON object in output")?;
    let turns = payload
        .get("turns")
        .and_then(Value::as_array)
        .filter(|t| !t.is_empty())
        .ok_or("turns missing or empty")?;
    let mut pairs = Vec::with_capacity(turns.len());
    for t in turns {
        let get = |k: &str| t.get(k).and_then(Value::as_str).map(str::trim).filter(|s| !s.is_empty());
        match (get("player"), get("npc")) {
            (Some(p), Some(n)) => pairs.push((p.to_string(), n.to_string())),
            _ => return Err("turn without player or npc text".into()),
        }
    }
    let (player, npc) = pairs.pop().expect("non-empty");
    let mut inst = base_instance(ctx, id, player);
    for (i, (p, n)) in pairs.into_iter().enumerate() {
        let t = 2 * i as u64;
        inst.history.push(DialogueTurn::player(p, t));
        inst.history.push(DialogueTurn::npc(n, vec![], vec![], t + 1));
    }
    inst.gold_response = Some(npc);
    Ok(inst)
}

fn reasoning_for(
    inst: &mut TaskInstance,
    templates: &TemplateSet,
    backend: &dyn Backend,
    profile: &BudgetProfile,
) -> Result<(), String> {
    let template = templates.get("datagen/reasoning").ok_or("reasoning template missing")?;
    let slots: BTreeMap<String, String> = [
        ("npc_role", inst.npc.role.to_string()),
        ("npc_persona", inst.npc.persona_text.clone()),
        ("player_dialogue", inst.player_text.clone()),
        ("npc_response", inst.gold_response.clone().unwrap_or_default()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let prompt = template.render(&slots).map_err(|e| e.to_string())?;
    let text = call_backend(backend, prompt, profile, &inst.id).map_err(|e| e.to_string())?;
    let text = text.trim();
    if text.is_empty() {
        return Err("empty reasoning".into());
    }
    inst.reasoning = Some(text.to_string());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockScript};
    use crate::world::{NpcRole, Season, WorldDefinition};

    fn demo() -> Corpus {
        Corpus::from_json(crate::demo::CORPUS_JSON).unwrap()
    }

    fn ctx() -> GenerationContext {
        let world = WorldDefinition::from_json(crate::demo::WORLD_JSON).unwrap();
        let npc = world.npc("merchant-bram").unwrap().clone();
        let scene = world.scene("weapon-shop-night").unwrap();
        GenerationContext {
            knowledge: world.knowledge_for(&npc),
            world: world.world_state(scene),
            registry: ToolRegistry::for_role(&npc.role),
            npc,
        }
    }

    #[test]
    fn demo_corpus_loads_six() {
        let c = demo();
        assert_eq!(c.len(), 6);
        assert_eq!(c.task, 3);
    }

    #[test]
    fn missing_gold_functions_names_field() {
        let mut c = demo();
        c.task = 1;
        c.instances[2].gold_functions = None;
        let err = Corpus::from_json(&c.to_json()).unwrap_err();
        assert!(matches!(err, CorpusError::Schema { ref field, .. } if field == "instances[2].gold_functions"), "{err}");
    }

    #[test]
    fn version_and_json_errors() {
        assert!(matches!(
            Corpus::from_json(r#"{"schema_version": 7, "task": 1, "instances": []}"#),
            Err(CorpusError::Version(7))
        ));
        let err = Corpus::from_json("{\"schema_version\": 1,\n \"task\": 1,\n \"instances\": [{\"id\": 3}]}").unwrap_err();
        assert!(matches!(err, CorpusError::Json { line: 3, .. }), "{err}");
    }

    #[test]
    fn round_trip_preserves_corpus() {
        let c = demo();
        assert_eq!(Corpus::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn stats_partition_and_golden() {
        let c = demo();
        let stats = corpus_stats(&c);
        assert_eq!(stats.by_role.values().sum::<usize>(), stats.total);
        assert_eq!(stats.by_season.values().sum::<usize>(), stats.total);
        assert_eq!(stats.by_weather.values().sum::<usize>(), stats.total);
        assert_eq!(stats.by_role["merchant"], 3);
        assert_eq!(stats.by_role["guild_receptionist"], 3);
        assert_eq!(stats.function_presence_ratio, 1.0);
        let golden: CorpusStats = serde_json::from_str(crate::demo::CORPUS_STATS_GOLDEN_JSON).unwrap();
        assert_eq!(stats, golden);
    }

    const VALID: &str = r#"{"player_dialogue": "The price is reasonable. Though before deciding, could you tell me more about how other magic users integrate this dagger into their combat style?", "gold_functions": [{"name": "check_description", "parameters": {"item_name": "Man Gauche"}}]}"#;

    #[test]
    fn generates_function_calling_instance() {
        let backend = MockBackend::new(MockScript::from_texts([VALID]));
        let spec = GenerationSpec::new(GenerationKind::FunctionCalling, 1);
        let out = generate_instances(&spec, &ctx(), &TemplateSet::builtin(), &backend, &generation_profile()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(
            out[0].gold_functions.as_deref().unwrap(),
            &[ToolCall::new("check_description", [("item_name", "Man Gauche")])]
        );
        let prompt = &backend.requests()[0].rendered.system_text;
        assert!(prompt.contains("check_description"));
        assert!(prompt.contains("Merchant"));
        Corpus::new(1, out).validate().unwrap();
    }

    #[test]
    fn invalid_generation_is_retried() {
        let bad = VALID.replace("check_description", "summon_dragon");
        let backend = MockBackend::new(MockScript::from_texts([bad.as_str(), "not json", VALID]));
        let spec = GenerationSpec::new(GenerationKind::FunctionCalling, 1);
        let out = generate_instances(&spec, &ctx(), &TemplateSet::builtin(), &backend, &generation_profile()).unwrap();
        assert_eq!(out.len(), 1);
        let backend = MockBackend::new(MockScript::from_texts([bad.as_str(); 4]));
        let err = generate_instances(&spec, &ctx(), &TemplateSet::builtin(), &backend, &generation_profile()).unwrap_err();
        assert!(matches!(err, CorpusError::GenerationExhausted { valid: 0, wanted: 1, attempts: 4 }));
    }

    #[test]
    fn zero_count_is_rejected() {
        let backend = MockBackend::new(MockScript::default());
        let spec = GenerationSpec::new(GenerationKind::FunctionCalling, 0);
        assert!(matches!(
            generate_instances(&spec, &ctx(), &TemplateSet::builtin(), &backend, &generation_profile()),
            Err(CorpusError::Precondition(_))
        ));
    }

    #[test]
    fn multi_turn_reasoning_instances() {
        let dialogue = r#"```json
{"turns": [{"player": "I leave for the ruins at dawn. Anything light for a mage?", "npc": "A Man Gauche, maybe. Light and easy on the wrist."},
           {"player": "How much would that run me?", "npc": "Hundred and twenty gold. Fair price for good steel."}]}
```"#;
        let backend = MockBackend::new(MockScript::from_texts([dialogue, "He wanted a quick answer, so I kept it short."]));
        let spec = GenerationSpec::new(GenerationKind::MultiTurnReasoning, 1);
        let out = generate_instances(&spec, &ctx(), &TemplateSet::builtin(), &backend, &generation_profile()).unwrap();
        let inst = &out[0];
        assert_eq!(inst.history.len(), 2);
        assert_eq!(inst.player_text, "How much would that run me?");
        assert_eq!(inst.gold_response.as_deref(), Some("Hundred and twenty gold. Fair price for good steel."));
        assert!(inst.reasoning.as_deref().unwrap().starts_with("He wanted"));
        Corpus::new(2, out).validate().unwrap();
    }

    #[test]
    fn record_inputs_use_gold_responses() {
        let inputs = demo().record_inputs("demo");
        assert_eq!(inputs.len(), 6);
        assert!(inputs.iter().all(|r| r.source == "demo" && !r.npc_text.is_empty()));
    }

    #[test]
    fn role_and_season_keys() {
        assert_eq!(NpcRole::GuildReceptionist.key(), "guild_receptionist");
        assert_eq!(Season::EarlySummer.key(), "early_summer");
    }
}
