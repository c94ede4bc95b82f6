//! Domain types for NPCs, scenes, knowledge and dialogue sessions.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::StrategyId;
use crate::toolbox::{ToolCall, ToolResult};

/// Version tag accepted in world definition and corpus files.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("out of order turn: expected timestamp {expected}, got {got}")]
    OutOfOrderTurn { expected: u64, got: u64 },
    #[error("speaker violation: {attempted:?} turn cannot follow {previous:?}")]
    SpeakerViolation {
        previous: Option<Speaker>,
        attempted: Speaker,
    },
    #[error("player turns cannot carry tool calls or results")]
    PlayerToolCalls,
    #[error("schema error at {field}: {message}")]
    Schema { field: String, message: String },
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
    #[error("invalid world json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl WorldError {
    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Schema {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum NpcRole {
    Merchant,
    GuildReceptionist,
    Other(String),
}

impl From<String> for NpcRole {
    fn from(label: String) -> Self {
        match label.trim().to_lowercase().replace([' ', '-'], "_").as_str() {
            "merchant" => Self::Merchant,
            "guild_receptionist" | "guild" => Self::GuildReceptionist,
            _ => Self::Other(label),
        }
    }
}

impl From<NpcRole> for String {
    fn from(role: NpcRole) -> Self {
        match role {
            NpcRole::Merchant => "merchant".into(),
            NpcRole::GuildReceptionist => "guild_receptionist".into(),
            NpcRole::Other(label) => label,
        }
    }
}

impl NpcRole {
    /// Short key used in reports and statistics.
    pub fn key(&self) -> String {
        String::from(self.clone())
    }
}

impl fmt::Display for NpcRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Merchant => f.write_str("Merchant"),
            Self::GuildReceptionist => f.write_str("Guild Receptionist"),
            Self::Other(label) => f.write_str(label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NpcProfile {
    pub id: String,
    pub role: NpcRole,
    pub persona_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
    #[serde(default)]
    pub knowledge_refs: Vec<String>,
}

impl NpcProfile {
    pub fn validate(&self, field: &str) -> Result<(), WorldError> {
        if self.id.trim().is_empty() {
            return Err(WorldError::schema(format!("{field}.id"), "must be non-empty"));
        }
        if self.persona_text.trim().is_empty() {
            return Err(WorldError::schema(
                format!("{field}.persona_text"),
                "must be non-empty",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Season {
    EarlySpring,
    LateSpring,
    EarlySummer,
    LateSummer,
    EarlyAutumn,
    LateAutumn,
    EarlyWinter,
    LateWinter,
}

impl Season {
    pub const ALL: [Season; 8] = [
        Season::EarlySpring,
        Season::LateSpring,
        Season::EarlySummer,
        Season::LateSummer,
        Season::EarlyAutumn,
        Season::LateAutumn,
        Season::EarlyWinter,
        Season::LateWinter,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Season::EarlySpring => "early_spring",
            Season::LateSpring => "late_spring",
            Season::EarlySummer => "early_summer",
            Season::LateSummer => "late_summer",
            Season::EarlyAutumn => "early_autumn",
            Season::LateAutumn => "late_autumn",
            Season::EarlyWinter => "early_winter",
            Season::LateWinter => "late_winter",
        }
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self {
            Season::EarlySpring => "Early Spring",
            Season::LateSpring => "Late Spring",
            Season::EarlySummer => "Early Summer",
            Season::LateSummer => "Late Summer",
            Season::EarlyAutumn => "Early Autumn",
            Season::LateAutumn => "Late Autumn",
            Season::EarlyWinter => "Early Winter",
            Season::LateWinter => "Late Winter",
        };
        f.write_str(label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub season: Season,
    /// Hour of day, 0-23.
    pub time_of_day: u8,
    pub weather: String,
    pub location: String,
    #[serde(default)]
    pub worldview_text: String,
}

impl WorldState {
    pub fn validate(&self, field: &str) -> Result<(), WorldError> {
        if self.time_of_day > 23 {
            return Err(WorldError::schema(
                format!("{field}.time_of_day"),
                format!("{} is outside 0-23", self.time_of_day),
            ));
        }
        Ok(())
    }

    /// "7 PM" style clock label.
    pub fn clock_label(&self) -> String {
        let hour = self.time_of_day % 24;
        let suffix = if hour < 12 { "AM" } else { "PM" };
        let twelve = match hour % 12 {
            0 => 12,
            h => h,
        };
        format!("{twelve} {suffix}")
    }

    /// One-line scene summary, e.g. "Early Summer 7 PM, clear at the Weapon Shop".
    pub fn scene_summary(&self) -> String {
        format!(
            "{} {}, {} at the {}",
            self.season,
            self.clock_label(),
            self.weather,
            self.location
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeKind {
    ItemDescription,
    QuestInfo,
    General,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub id: String,
    pub kind: KnowledgeKind,
    pub subject: String,
    pub body: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Player,
    Npc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_results: Vec<ToolResult>,
    pub timestamp: u64,
}

impl DialogueTurn {
    pub fn player(text: impl Into<String>, timestamp: u64) -> Self {
        Self {
            speaker: Speaker::Player,
            text: text.into(),
            tool_calls: Vec::new(),
            tool_results: Vec::new(),
            timestamp,
        }
    }

    pub fn npc(
        text: impl Into<String>,
        tool_calls: Vec<ToolCall>,
        tool_results: Vec<ToolResult>,
        timestamp: u64,
    ) -> Self {
        Self {
            speaker: Speaker::Npc,
            text: text.into(),
            tool_calls,
            tool_results,
            timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub npc: NpcProfile,
    pub world: WorldState,
    #[serde(default)]
    pub turns: Vec<DialogueTurn>,
    #[serde(default)]
    pub strategy_set: Vec<StrategyId>,
    pub budget_profile: String,
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        npc: NpcProfile,
        world: WorldState,
        strategy_set: Vec<StrategyId>,
        budget_profile: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            npc,
            world,
            turns: Vec::new(),
            strategy_set,
            budget_profile: budget_profile.into(),
        }
    }

    /// Timestamp the next appended turn must carry.
    pub fn next_timestamp(&self) -> u64 {
        self.turns.last().map_or(0, |t| t.timestamp + 1)
    }

    /// Returns a copy of the session with `turn` appended.
    pub fn append_turn(&self, turn: DialogueTurn) -> Result<Session, WorldError> {
        let expected = self.next_timestamp();
        if turn.timestamp != expected {
            return Err(WorldError::OutOfOrderTurn {
                expected,
                got: turn.timestamp,
            });
        }
        let previous = self.turns.last().map(|t| t.speaker);
        let allowed = match previous {
            None => turn.speaker == Speaker::Player,
            Some(prev) => prev != turn.speaker,
        };
        if !allowed {
            return Err(WorldError::SpeakerViolation {
                previous,
                attempted: turn.speaker,
            });
        }
        if turn.speaker == Speaker::Player
            && (!turn.tool_calls.is_empty() || !turn.tool_results.is_empty())
        {
            return Err(WorldError::PlayerToolCalls);
        }
        let mut next = self.clone();
        next.turns.push(turn);
        Ok(next)
    }
}

/// Renders the `{character_setting}` block: role, persona, optional age and
/// gender, then the scene fields.
pub fn render_character_setting(npc: &NpcProfile, world: &WorldState) -> String {
    let mut lines = vec![
        format!("Role: {}", npc.role),
        format!("Persona: {}", npc.persona_text.trim()),
    ];
    if let Some(age) = npc.age {
        lines.push(format!("Age: {age}"));
    }
    if let Some(gender) = npc.gender.as_deref().filter(|g| !g.trim().is_empty()) {
        lines.push(format!("Gender: {}", gender.trim()));
    }
    lines.push(format!("Season: {}", world.season));
    lines.push(format!("Time: {}", world.clock_label()));
    lines.push(format!("Weather: {}", world.weather));
    lines.push(format!("Location: {}", world.location));
    lines.join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub season: Season,
    pub time_of_day: u8,
    pub weather: String,
    pub location: String,
}

/// Contents of a world definition file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldDefinition {
    pub schema_version: u32,
    pub npcs: Vec<NpcProfile>,
    #[serde(default)]
    pub knowledge: Vec<KnowledgeEntry>,
    #[serde(default)]
    pub worldview: String,
    #[serde(default)]
    pub scenes: Vec<Scene>,
}

impl WorldDefinition {
    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let version = raw
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| WorldError::schema("schema_version", "missing or not an integer"))?;
        if version != u64::from(SCHEMA_VERSION) {
            return Err(WorldError::Version(version as u32));
        }
        let world: WorldDefinition = serde_json::from_value(raw)?;
        world.validate()?;
        Ok(world)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let mut knowledge_ids = BTreeSet::new();
        for (i, entry) in self.knowledge.iter().enumerate() {
            if !knowledge_ids.insert(entry.id.as_str()) {
                return Err(WorldError::schema(
                    format!("knowledge[{i}].id"),
                    format!("duplicate id '{}'", entry.id),
                ));
            }
            if entry.body.trim().is_empty() {
                return Err(WorldError::schema(format!("knowledge[{i}].body"), "must be non-empty"));
            }
        }
        let mut npc_ids = BTreeSet::new();
        for (i, npc) in self.npcs.iter().enumerate() {
            let field = format!("npcs[{i}]");
            npc.validate(&field)?;
            if !npc_ids.insert(npc.id.as_str()) {
                return Err(WorldError::schema(
                    format!("{field}.id"),
                    format!("duplicate id '{}'", npc.id),
                ));
            }
            for r in &npc.knowledge_refs {
                if !knowledge_ids.contains(r.as_str()) {
                    return Err(WorldError::schema(
                        format!("{field}.knowledge_refs"),
                        format!("unknown knowledge id '{r}'"),
                    ));
                }
            }
        }
        let mut scene_ids = BTreeSet::new();
        for (i, scene) in self.scenes.iter().enumerate() {
            if !scene_ids.insert(scene.id.as_str()) {
                return Err(WorldError::schema(
                    format!("scenes[{i}].id"),
                    format!("duplicate id '{}'", scene.id),
                ));
            }
            if scene.time_of_day > 23 {
                return Err(WorldError::schema(
                    format!("scenes[{i}].time_of_day"),
                    format!("{} is outside 0-23", scene.time_of_day),
                ));
            }
        }
        Ok(())
    }

    pub fn npc(&self, id: &str) -> Option<&NpcProfile> {
        self.npcs.iter().find(|n| n.id == id)
    }

    pub fn scene(&self, id: &str) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.id == id)
    }

    /// Builds the world state for a scene, carrying the world's worldview text.
    pub fn world_state(&self, scene: &Scene) -> WorldState {
        WorldState {
            season: scene.season,
            time_of_day: scene.time_of_day,
            weather: scene.weather.clone(),
            location: scene.location.clone(),
            worldview_text: self.worldview.clone(),
        }
    }

    /// Knowledge entries referenced by `npc`, ordered by id.
    pub fn knowledge_for(&self, npc: &NpcProfile) -> Vec<KnowledgeEntry> {
        let mut entries: Vec<KnowledgeEntry> = self
            .knowledge
            .iter()
            .filter(|k| npc.knowledge_refs.contains(&k.id))
            .cloned()
            .collect();
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        entries
    }
}
