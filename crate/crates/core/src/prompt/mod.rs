//! Prompting strategies as composable template layers.
//!
//! Each phase has a base template (`<phase>/zero_shot`). Every strategy file
//! overrides or removes whole sections of it. Strategies are applied in a
//! fixed order regardless of their order in the plan, and sections are
//! emitted in [`SECTION_ORDER`], so composing a set of strategies always
//! yields the same text.

mod template;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::approx_token_count;
use crate::world::Speaker;

pub use template::{render_body, slot_names, Section, Template, TemplateSet, BUILTIN};

/// Emission order of prompt sections.
pub const SECTION_ORDER: [&str; 13] = [
    "instruction",
    "focus",
    "character_profile",
    "tools",
    "knowledge",
    "style_guide",
    "word_guide",
    "examples",
    "function_samples",
    "retrieved",
    "worldview",
    "output_format",
    "dialogue",
];

/// Slot names understood by the phase templates.
pub mod slot {
    pub const CHARACTER_SETTING: &str = "character_setting";
    pub const FUNCTION_KNOWLEDGE: &str = "function_knowledge";
    pub const GENERAL_KNOWLEDGE: &str = "general_knowledge";
    pub const WORLDVIEW: &str = "worldview";
    pub const FORMATTED_TOOLS: &str = "formatted_tools";
    pub const DIALOGUE_HISTORY: &str = "dialogue_history";
    pub const FEW_SHOT_BLOCK: &str = "few_shot_block";
    pub const SIMILAR_RESPONSES: &str = "similar_responses";
}

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("slot '{slot}' required by section '{section}' is not filled")]
    MissingSlot { slot: String, section: String },
    #[error("strategy {strategy} cannot be used in the {phase} phase")]
    PhaseMismatch { strategy: StrategyId, phase: Phase },
    #[error("ZeroShot is the absence of other strategies and cannot be combined with them")]
    ZeroShotCombined,
    #[error("strategy {0} listed more than once")]
    DuplicateStrategy(StrategyId),
    #[error("unknown strategy '{0}'")]
    UnknownStrategy(String),
    #[error("template {name}: {message}")]
    Template { name: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    FunctionPhase,
    DialoguePhase,
}

impl Phase {
    fn dir(self) -> &'static str {
        match self {
            Phase::FunctionPhase => "function",
            Phase::DialoguePhase => "dialogue",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::FunctionPhase => "function",
            Phase::DialoguePhase => "dialogue",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    ApiTrack,
    GpuTrack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StrategyId {
    ZeroShot,
    Deflanderization,
    FewShot,
    CoT,
    RemoveWorld,
    Guide,
    MostWord,
    DefineFunction,
}

impl StrategyId {
    pub const ALL: [StrategyId; 8] = [
        StrategyId::ZeroShot,
        StrategyId::Deflanderization,
        StrategyId::FewShot,
        StrategyId::CoT,
        StrategyId::RemoveWorld,
        StrategyId::Guide,
        StrategyId::MostWord,
        StrategyId::DefineFunction,
    ];

    /// Order in which strategy layers are applied. MostWord follows Guide so
    /// its superset style guide wins when both are present.
    const APPLY_ORDER: [StrategyId; 7] = [
        StrategyId::Deflanderization,
        StrategyId::CoT,
        StrategyId::FewShot,
        StrategyId::DefineFunction,
        StrategyId::Guide,
        StrategyId::MostWord,
        StrategyId::RemoveWorld,
    ];

    /// Short label: D, F, ZeroShot, CoT, RW, G, MW, DefineFunction.
    pub fn label(self) -> &'static str {
        match self {
            StrategyId::ZeroShot => "ZeroShot",
            StrategyId::Deflanderization => "D",
            StrategyId::FewShot => "F",
            StrategyId::CoT => "CoT",
            StrategyId::RemoveWorld => "RW",
            StrategyId::Guide => "G",
            StrategyId::MostWord => "MW",
            StrategyId::DefineFunction => "DefineFunction",
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            StrategyId::ZeroShot => "zero_shot",
            StrategyId::Deflanderization => "deflanderization",
            StrategyId::FewShot => "few_shot",
            StrategyId::CoT => "cot",
            StrategyId::RemoveWorld => "remove_world",
            StrategyId::Guide => "guide",
            StrategyId::MostWord => "most_word",
            StrategyId::DefineFunction => "define_function",
        }
    }

    pub fn allowed_in(self, phase: Phase) -> bool {
        match phase {
            Phase::FunctionPhase => !matches!(
                self,
                StrategyId::Guide | StrategyId::MostWord | StrategyId::RemoveWorld
            ),
            Phase::DialoguePhase => !matches!(self, StrategyId::CoT | StrategyId::DefineFunction),
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for StrategyId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        Ok(match key.as_str() {
            "zeroshot" | "z" => StrategyId::ZeroShot,
            "d" | "deflanderization" => StrategyId::Deflanderization,
            "f" | "fewshot" => StrategyId::FewShot,
            "cot" | "chainofthought" => StrategyId::CoT,
            "rw" | "removeworld" | "removeworldsetting" => StrategyId::RemoveWorld,
            "g" | "guide" => StrategyId::Guide,
            "mw" | "mostword" => StrategyId::MostWord,
            "definefunction" | "func" => StrategyId::DefineFunction,
            _ => return Err(PromptError::UnknownStrategy(s.to_string())),
        })
    }
}

impl TryFrom<String> for StrategyId {
    type Error = PromptError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<StrategyId> for String {
    fn from(s: StrategyId) -> Self {
        s.label().to_string()
    }
}

/// Parses a strategy list such as `"D-F-RW"` or `"D,RW,F"`.
pub fn parse_strategy_list(s: &str) -> Result<Vec<StrategyId>, PromptError> {
    s.split([',', '-', '+', ' '])
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub phase: Phase,
    pub strategies: Vec<StrategyId>,
    #[serde(default)]
    pub slots: BTreeMap<String, String>,
    /// Conversation replayed as chat messages, ending with the current
    /// player utterance.
    #[serde(default)]
    pub history: Vec<ChatMessage>,
}

impl PromptPlan {
    pub fn new(phase: Phase, strategies: Vec<StrategyId>) -> Self {
        Self {
            phase,
            strategies,
            slots: BTreeMap::new(),
            history: Vec::new(),
        }
    }

    pub fn with_slot(mut self, name: &str, value: impl Into<String>) -> Self {
        self.slots.insert(name.to_string(), value.into());
        self
    }

    pub fn has(&self, strategy: StrategyId) -> bool {
        self.strategies.contains(&strategy)
    }

    /// Phase invariants: phase-specific strategies only, no duplicates and
    /// ZeroShot only on its own.
    pub fn check(&self) -> Result<(), PromptError> {
        let mut seen = Vec::new();
        for &s in &self.strategies {
            if seen.contains(&s) {
                return Err(PromptError::DuplicateStrategy(s));
            }
            seen.push(s);
            if !s.allowed_in(self.phase) {
                return Err(PromptError::PhaseMismatch {
                    strategy: s,
                    phase: self.phase,
                });
            }
        }
        if self.has(StrategyId::ZeroShot) && self.strategies.len() > 1 {
            return Err(PromptError::ZeroShotCombined);
        }
        Ok(())
    }

    /// Appends `text` to a slot, separating entries with a newline.
    pub fn append_slot(&mut self, name: &str, text: &str) {
        let entry = self.slots.entry(name.to_string()).or_default();
        if !entry.is_empty() {
            entry.push('\n');
        }
        entry.push_str(text);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedSection {
    pub id: String,
    /// Strategy whose template produced the section; `None` for the base.
    pub owner: Option<StrategyId>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system_text: String,
    pub messages: Vec<ChatMessage>,
    pub approx_tokens: usize,
}

impl RenderedPrompt {
    pub fn new(system_text: String, messages: Vec<ChatMessage>) -> Self {
        let approx_tokens = approx_token_count(&system_text)
            + messages
                .iter()
                .map(|m| approx_token_count(&m.text))
                .sum::<usize>();
        Self {
            system_text,
            messages,
            approx_tokens,
        }
    }

    /// System text followed by every message, for substring checks.
    pub fn full_text(&self) -> String {
        let mut out = self.system_text.clone();
        for m in &self.messages {
            out.push('\n');
            out.push_str(&m.text);
        }
        out
    }
}

impl TemplateSet {
    /// Renders the plan section by section.
    pub fn compose_sections(&self, plan: &PromptPlan) -> Result<Vec<RenderedSection>, PromptError> {
        plan.check()?;
        let dir = plan.phase.dir();
        let base = self.require(&format!("{dir}/zero_shot"))?;
        let mut layers: BTreeMap<&str, (Option<StrategyId>, &Section)> = BTreeMap::new();
        for section in &base.sections {
            check_section_id(&section.id, dir, "zero_shot")?;
            layers.insert(section.id.as_str(), (None, section));
        }
        for strategy in StrategyId::APPLY_ORDER {
            if !plan.has(strategy) {
                continue;
            }
            let name = format!("{dir}/{}", strategy.file_stem());
            let Some(layer) = self.get(&name) else {
                continue;
            };
            for section in &layer.sections {
                check_section_id(&section.id, dir, strategy.file_stem())?;
                layers.insert(section.id.as_str(), (Some(strategy), section));
            }
        }
        let mut out = Vec::new();
        for id in SECTION_ORDER {
            let Some((owner, section)) = layers.get(id) else {
                continue;
            };
            if let Some(text) = template::render_section(section, &plan.slots)? {
                out.push(RenderedSection {
                    id: id.to_string(),
                    owner: *owner,
                    text,
                });
            }
        }
        Ok(out)
    }

    pub fn compose(&self, plan: &PromptPlan) -> Result<RenderedPrompt, PromptError> {
        let sections = self.compose_sections(plan)?;
        let system_text = sections
            .into_iter()
            .map(|s| s.text)
            .collect::<Vec<_>>()
            .join("\n\n");
        Ok(RenderedPrompt::new(system_text, plan.history.clone()))
    }
}

fn check_section_id(id: &str, dir: &str, stem: &str) -> Result<(), PromptError> {
    if SECTION_ORDER.contains(&id) {
        Ok(())
    } else {
        Err(PromptError::Template {
            name: format!("{dir}/{stem}"),
            message: format!("unknown section '{id}'"),
        })
    }
}

/// Composes `plan` with the built-in templates.
pub fn compose(plan: &PromptPlan) -> Result<RenderedPrompt, PromptError> {
    builtin_templates().compose(plan)
}

fn builtin_templates() -> &'static TemplateSet {
    static SET: std::sync::OnceLock<TemplateSet> = std::sync::OnceLock::new();
    SET.get_or_init(TemplateSet::builtin)
}

/// Default strategy sets. The API track uses D-RW with the two-turn sample
/// dialogue for replies and FewShot + DefineFunction for function selection;
/// the GPU track uses the bare templates.
pub fn default_plan(track: Track, phase: Phase) -> PromptPlan {
    let strategies = match (track, phase) {
        (Track::ApiTrack, Phase::DialoguePhase) => vec![
            StrategyId::Deflanderization,
            StrategyId::RemoveWorld,
            StrategyId::FewShot,
        ],
        (Track::ApiTrack, Phase::FunctionPhase) => {
            vec![StrategyId::FewShot, StrategyId::DefineFunction]
        }
        (Track::GpuTrack, _) => Vec::new(),
    };
    PromptPlan::new(phase, strategies)
}

/// Substring or predicate that shows a strategy took effect in a rendered prompt.
pub fn strategy_marker(strategy: StrategyId, phase: Phase) -> &'static str {
    match (strategy, phase) {
        (StrategyId::Deflanderization, _) => "Avoid exaggerated roleplay or guessing",
        (StrategyId::RemoveWorld, _) => "# Worldview",
        (StrategyId::FewShot, Phase::DialoguePhase) => {
            "I'm gathering information about the legendary sword"
        }
        (StrategyId::FewShot, Phase::FunctionPhase) => "# Example Function Information",
        (StrategyId::CoT, _) => "**Reasoning:**",
        (StrategyId::Guide, _) => "Limit to 1–2 short, natural sentences",
        (StrategyId::MostWord, _) => "Avoid These Overused Phrases",
        (StrategyId::DefineFunction, _) => "# Sample Function Arguments",
        (StrategyId::ZeroShot, _) => "",
    }
}

/// Whether `strategy`'s effect is visible in `text`. RemoveWorld is detected
/// by the absence of the worldview header and of `worldview_text`.
pub fn strategy_in_effect(strategy: StrategyId, phase: Phase, text: &str, worldview_text: &str) -> bool {
    match strategy {
        StrategyId::RemoveWorld => {
            !text.contains(strategy_marker(strategy, phase))
                && (worldview_text.is_empty() || !text.contains(worldview_text))
        }
        StrategyId::ZeroShot => false,
        _ => text.contains(strategy_marker(strategy, phase)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const WORLDVIEW: &str = "The continent of Aldora is ruled by guild charters.";

    fn filled(phase: Phase, strategies: Vec<StrategyId>) -> PromptPlan {
        let mut plan = PromptPlan::new(phase, strategies)
            .with_slot(slot::CHARACTER_SETTING, "Role: Merchant\nLocation: Weapon Shop")
            .with_slot(slot::FUNCTION_KNOWLEDGE, "Man Gauche: a parrying dagger.")
            .with_slot(slot::GENERAL_KNOWLEDGE, "Long Sword: a balanced blade.")
            .with_slot(slot::WORLDVIEW, WORLDVIEW)
            .with_slot(slot::FORMATTED_TOOLS, "- check_description(item_name)");
        plan.history.push(ChatMessage {
            speaker: Speaker::Player,
            text: "Tell me about this dagger.".into(),
        });
        plan
    }

    use StrategyId::*;

    #[test]
    fn deflanderization_marker_present() {
        let out = compose(&filled(Phase::DialoguePhase, vec![Deflanderization])).unwrap();
        assert!(out.system_text.contains("Avoid exaggerated roleplay or guessing"));
    }

    #[test]
    fn remove_world_drops_worldview() {
        let out = compose(&filled(Phase::DialoguePhase, vec![Deflanderization, RemoveWorld])).unwrap();
        assert!(!out.system_text.contains(WORLDVIEW));
        assert!(!out.system_text.contains("# Worldview"));
        let with = compose(&filled(Phase::DialoguePhase, vec![Deflanderization])).unwrap();
        assert!(with.system_text.contains(WORLDVIEW));
    }

    #[test]
    fn zero_shot_is_byte_stable_and_identity() {
        let a = compose(&filled(Phase::DialoguePhase, vec![])).unwrap();
        let b = compose(&filled(Phase::DialoguePhase, vec![])).unwrap();
        let z = compose(&filled(Phase::DialoguePhase, vec![ZeroShot])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, z);
        for s in [Deflanderization, FewShot, Guide, MostWord] {
            assert!(!strategy_in_effect(s, Phase::DialoguePhase, &a.system_text, WORLDVIEW));
        }
    }

    #[test]
    fn plan_invariants() {
        assert_eq!(
            filled(Phase::DialoguePhase, vec![ZeroShot, Deflanderization]).check(),
            Err(PromptError::ZeroShotCombined)
        );
        assert!(matches!(
            compose(&filled(Phase::DialoguePhase, vec![CoT])),
            Err(PromptError::PhaseMismatch { strategy: CoT, .. })
        ));
        assert!(matches!(
            compose(&filled(Phase::FunctionPhase, vec![Guide])),
            Err(PromptError::PhaseMismatch { strategy: Guide, .. })
        ));
        assert_eq!(
            filled(Phase::DialoguePhase, vec![Guide, Guide]).check(),
            Err(PromptError::DuplicateStrategy(Guide))
        );
    }

    #[test]
    fn missing_worldview_slot_only_matters_without_rw() {
        let mut plan = filled(Phase::DialoguePhase, vec![Deflanderization]);
        plan.slots.remove(slot::WORLDVIEW);
        assert!(matches!(compose(&plan), Err(PromptError::MissingSlot { ref slot, .. }) if slot == "worldview"));
        plan.strategies.push(RemoveWorld);
        assert!(compose(&plan).is_ok());
    }

    #[test]
    fn default_plans() {
        let p = default_plan(Track::ApiTrack, Phase::DialoguePhase);
        assert_eq!(p.strategies, vec![Deflanderization, RemoveWorld, FewShot]);
        assert!(default_plan(Track::GpuTrack, Phase::DialoguePhase).strategies.is_empty());
        for track in [Track::ApiTrack, Track::GpuTrack] {
            for phase in [Phase::FunctionPhase, Phase::DialoguePhase] {
                assert!(default_plan(track, phase).check().is_ok());
            }
        }
    }

    fn power_set(items: &[StrategyId]) -> Vec<Vec<StrategyId>> {
        (0..1u32 << items.len())
            .map(|mask| {
                items
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, s)| *s)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn markers_track_membership_over_power_sets() {
        let dialogue = [Deflanderization, FewShot, RemoveWorld, Guide, MostWord];
        let function = [Deflanderization, FewShot, CoT, DefineFunction];
        let all = [Deflanderization, RemoveWorld, FewShot, CoT, Guide, MostWord, DefineFunction];
        for (phase, items) in [(Phase::DialoguePhase, &dialogue[..]), (Phase::FunctionPhase, &function[..])] {
            for set in power_set(items) {
                let out = compose(&filled(phase, set.clone())).unwrap();
                for s in all {
                    // MostWord's style guide textually contains Guide's bullets.
                    let expected = set.contains(&s) || (s == Guide && set.contains(&MostWord));
                    assert_eq!(
                        strategy_in_effect(s, phase, &out.system_text, WORLDVIEW),
                        expected,
                        "{phase} {set:?} {s}"
                    );
                }
            }
        }
    }

    #[test]
    fn disjoint_pairs_commute() {
        let four = [Deflanderization, RemoveWorld, Guide, MostWord];
        for a in four {
            for b in four {
                if a == b {
                    continue;
                }
                let ab = compose(&filled(Phase::DialoguePhase, vec![a, b])).unwrap();
                let ba = compose(&filled(Phase::DialoguePhase, vec![b, a])).unwrap();
                assert_eq!(ab, ba, "{a} {b}");
            }
        }
    }

    #[test]
    fn strategy_only_changes_its_own_sections() {
        let set = TemplateSet::builtin();
        let bases = [vec![], vec![Deflanderization], vec![FewShot, Guide]];
        for phase in [Phase::DialoguePhase, Phase::FunctionPhase] {
            for s in StrategyId::ALL.into_iter().filter(|s| *s != ZeroShot && s.allowed_in(phase)) {
                for base in &bases {
                    if base.contains(&s) || base.iter().any(|b| !b.allowed_in(phase)) {
                        continue;
                    }
                    let without = set.compose_sections(&filled(phase, base.clone())).unwrap();
                    let mut with_s = base.clone();
                    with_s.push(s);
                    let with = set.compose_sections(&filled(phase, with_s)).unwrap();
                    let owned: Vec<&str> = with
                        .iter()
                        .filter(|r| r.owner == Some(s))
                        .map(|r| r.id.as_str())
                        .chain(if s == RemoveWorld { Some("worldview") } else { None })
                        .collect();
                    let strip = |v: &[RenderedSection]| -> Vec<(String, String)> {
                        v.iter()
                            .filter(|r| !owned.contains(&r.id.as_str()))
                            .map(|r| (r.id.clone(), r.text.clone()))
                            .collect()
                    };
                    assert_eq!(strip(&without), strip(&with), "{phase} {base:?} + {s}");
                    let a = compose(&filled(phase, base.clone())).unwrap().system_text;
                    let mut b_plan = base.clone();
                    b_plan.push(s);
                    let b = compose(&filled(phase, b_plan)).unwrap().system_text;
                    assert_ne!(a, b);
                }
            }
        }
    }

    #[test]
    fn no_unfilled_slot_markers_in_output() {
        let dialogue = [Deflanderization, FewShot, RemoveWorld, Guide, MostWord];
        for set in power_set(&dialogue) {
            let out = compose(&filled(Phase::DialoguePhase, set)).unwrap();
            for name in slot_names(&out.system_text) {
                panic!("unfilled slot {{{name}}} in output");
            }
        }
    }

    #[test]
    fn token_count_covers_all_text() {
        let out = compose(&filled(Phase::FunctionPhase, vec![FewShot])).unwrap();
        assert_eq!(
            out.approx_tokens,
            approx_token_count(&out.system_text) + approx_token_count("Tell me about this dagger.")
        );
    }

    #[test]
    fn strategy_labels_parse() {
        assert_eq!(parse_strategy_list("D-F-RW").unwrap(), vec![Deflanderization, FewShot, RemoveWorld]);
        assert_eq!(parse_strategy_list("cot, define_function").unwrap(), vec![CoT, DefineFunction]);
        assert!(matches!(parse_strategy_list("D,XX"), Err(PromptError::UnknownStrategy(_))));
        let json = serde_json::to_string(&vec![Deflanderization, MostWord]).unwrap();
        assert_eq!(json, r#"["D","MW"]"#);
        assert!(serde_json::from_str::<StrategyId>("\"bogus\"").is_err());
    }

    #[test]
    fn retrieved_section_appears_only_when_filled() {
        let mut plan = filled(Phase::DialoguePhase, vec![]);
        assert!(!compose(&plan).unwrap().system_text.contains("# Similar Past Responses"));
        plan.append_slot(slot::SIMILAR_RESPONSES, "- Fine blade, that one.");
        assert!(compose(&plan).unwrap().system_text.contains("Fine blade, that one."));
    }
}
