//! Retrieval memory over past player/NPC exchanges.
//!
//! Records are embedded once at build time and searched by exhaustive
//! cosine scan. Hits feed the function-selection and dialogue-drafting
//! prompts, and the best hit can drive a length-matching rewrite of the
//! drafted reply (see [`refine`]).

mod embed;
mod refine;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{slot, Phase, PromptPlan};
use crate::toolbox::ToolCall;

pub use embed::{fnv1a64, EmbeddingProvider, EmbeddingVector, HashEmbedder, RemoteEmbedder, TableEmbedder};
pub use refine::{refine, target_word_band, RefineConfig, RefineOutcome, SkipReason};

pub const DEFAULT_K: usize = 3;
pub const DEFAULT_MIN_SIM: f64 = 0.35;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("embedding provider error: {0}")]
    Provider(String),
    #[error("stage {stage:?} does not apply to a {phase} prompt")]
    PhaseMismatch { stage: Stage, phase: Phase },
    #[error("invalid retrieval parameters: {0}")]
    BadParams(String),
    #[error("invalid index json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub id: String,
    pub player_text: String,
    pub npc_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_functions: Option<Vec<ToolCall>>,
    pub embedding: EmbeddingVector,
    #[serde(default)]
    pub source: String,
}

/// Unembedded input to [`RetrievalIndex::build`].
#[derive(Debug, Clone, PartialEq)]
pub struct RecordInput {
    pub id: String,
    pub player_text: String,
    pub npc_text: String,
    pub gold_functions: Option<Vec<ToolCall>>,
    pub source: String,
}

/// Text embedded for a record: the player line and the NPC reply.
pub fn record_text(player_text: &str, npc_text: &str) -> String {
    format!("{player_text}\n{npc_text}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalIndex {
    pub provider_id: String,
    pub dim: usize,
    pub records: Vec<RetrievalRecord>,
}

/// A retrieved record and its cosine similarity to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<'a> {
    pub record: &'a RetrievalRecord,
    pub similarity: f64,
}

impl RetrievalIndex {
    pub fn new(provider_id: impl Into<String>, dim: usize) -> Self {
        Self {
            provider_id: provider_id.into(),
            dim,
            records: Vec::new(),
        }
    }

    pub fn build(
        provider: &dyn EmbeddingProvider,
        inputs: impl IntoIterator<Item = RecordInput>,
    ) -> Result<Self, MemoryError> {
        let mut index = Self::new(provider.id(), provider.dim());
        for input in inputs {
            let embedding = provider.embed(&record_text(&input.player_text, &input.npc_text))?;
            index.push(RetrievalRecord {
                id: input.id,
                player_text: input.player_text,
                npc_text: input.npc_text,
                gold_functions: input.gold_functions,
                embedding,
                source: input.source,
            })?;
        }
        Ok(index)
    }

    pub fn push(&mut self, record: RetrievalRecord) -> Result<(), MemoryError> {
        if record.embedding.dim() != self.dim {
            return Err(MemoryError::DimMismatch {
                expected: self.dim,
                got: record.embedding.dim(),
            });
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self, MemoryError> {
        let index: Self = serde_json::from_str(text)?;
        for r in &index.records {
            if r.embedding.dim() != index.dim {
                return Err(MemoryError::DimMismatch {
                    expected: index.dim,
                    got: r.embedding.dim(),
                });
            }
        }
        Ok(index)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MemoryError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&RetrievalRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Top-`k` records by cosine similarity, highest first, ties broken by
    /// insertion order. Records below `min_sim` are dropped.
    pub fn retrieve(&self, query: &EmbeddingVector, k: usize, min_sim: f64) -> Result<Vec<Hit<'_>>, MemoryError> {
        if query.dim() != self.dim {
            return Err(MemoryError::DimMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        if k == 0 || !(-1.0..=1.0).contains(&min_sim) {
            return Err(MemoryError::BadParams(format!("k={k}, min_sim={min_sim}")));
        }
        let mut scored = Vec::with_capacity(self.records.len());
        for (i, record) in self.records.iter().enumerate() {
            let similarity = query.cosine(&record.embedding)?;
            if similarity >= min_sim {
                scored.push((i, similarity));
            }
        }
        // Stable sort keeps insertion order among equal similarities.
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(i, similarity)| Hit {
                record: &self.records[i],
                similarity,
            })
            .collect())
    }
}

/// Where retrieved records are injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    FunctionSelection,
    DialogueDrafting,
}

impl Stage {
    pub fn phase(self) -> Phase {
        match self {
            Stage::FunctionSelection => Phase::FunctionPhase,
            Stage::DialogueDrafting => Phase::DialoguePhase,
        }
    }
}

/// Adds retrieved records to the plan's slots: player requests with their
/// gold calls for function selection, NPC replies for dialogue drafting.
/// Calling this twice duplicates the block.
pub fn inject(stage: Stage, mut plan: PromptPlan, hits: &[Hit<'_>]) -> Result<PromptPlan, MemoryError> {
    if stage.phase() != plan.phase {
        return Err(MemoryError::PhaseMismatch {
            stage,
            phase: plan.phase,
        });
    }
    for hit in hits {
        let r = hit.record;
        match stage {
            Stage::FunctionSelection => {
                let calls = r.gold_functions.as_deref().unwrap_or_default();
                let calls = serde_json::to_string(calls).expect("tool calls serialize");
                let entry = format!("Player: \"{}\"\nFunctions: {calls}", r.player_text);
                plan.append_slot(slot::FEW_SHOT_BLOCK, &entry);
            }
            Stage::DialogueDrafting => {
                plan.append_slot(slot::SIMILAR_RESPONSES, &format!("- {}", r.npc_text));
            }
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::compose;

    fn unit(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap().normalized()
    }

    fn record(id: &str, v: &[f64]) -> RetrievalRecord {
        RetrievalRecord {
            id: id.into(),
            player_text: format!("player {id}"),
            npc_text: format!("npc {id}"),
            gold_functions: None,
            embedding: unit(v),
            source: "test".into(),
        }
    }

    fn index() -> RetrievalIndex {
        let mut idx = RetrievalIndex::new("test", 2);
        idx.push(record("a", &[1.0, 0.0])).unwrap();
        idx.push(record("b", &[0.0, 1.0])).unwrap();
        idx.push(record("c", &[1.0, 1.0])).unwrap();
        idx
    }

    #[test]
    fn self_query_ranks_first() {
        let idx = index();
        let hits = idx.retrieve(&unit(&[0.0, 1.0]), 3, -1.0).unwrap();
        assert_eq!(hits[0].record.id, "b");
        assert!((hits[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn large_k_returns_everything() {
        assert_eq!(index().retrieve(&unit(&[1.0, 0.0]), 10, -1.0).unwrap().len(), 3);
    }

    #[test]
    fn min_sim_filters_and_ties_keep_insertion_order() {
        let mut idx = index();
        idx.push(record("d", &[1.0, 0.0])).unwrap();
        let hits = idx.retrieve(&unit(&[1.0, 0.0]), 10, 0.5).unwrap();
        let ids: Vec<&str> = hits.iter().map(|h| h.record.id.as_str()).collect();
        assert_eq!(ids, ["a", "d", "c"]);
    }

    #[test]
    fn bad_queries_rejected() {
        let idx = index();
        assert!(matches!(
            idx.retrieve(&unit(&[1.0, 0.0, 0.0]), 1, 0.0),
            Err(MemoryError::DimMismatch { .. })
        ));
        assert!(idx.retrieve(&unit(&[1.0, 0.0]), 0, 0.0).is_err());
        assert!(idx.retrieve(&unit(&[1.0, 0.0]), 1, 1.5).is_err());
    }

    #[test]
    fn index_json_round_trip() {
        let idx = index();
        let back = RetrievalIndex::from_json(&serde_json::to_string(&idx).unwrap()).unwrap();
        assert_eq!(back, idx);
        let json = serde_json::to_value(&idx).unwrap();
        for key in ["provider_id", "dim", "records"] {
            assert!(json.get(key).is_some());
        }
    }

    fn plan(phase: Phase) -> PromptPlan {
        PromptPlan::new(phase, vec![])
            .with_slot(slot::CHARACTER_SETTING, "Role: Merchant")
            .with_slot(slot::FUNCTION_KNOWLEDGE, "")
            .with_slot(slot::GENERAL_KNOWLEDGE, "")
            .with_slot(slot::WORLDVIEW, "Aldora")
            .with_slot(slot::FORMATTED_TOOLS, "- check_description")
    }

    #[test]
    fn zero_hits_leave_plan_unchanged() {
        let p = plan(Phase::DialoguePhase);
        assert_eq!(inject(Stage::DialogueDrafting, p.clone(), &[]).unwrap(), p);
    }

    #[test]
    fn function_selection_injects_gold_calls() {
        let mut r = record("a", &[1.0, 0.0]);
        r.gold_functions = Some(vec![ToolCall::new("check_price", [("item_name", "Long Sword")])]);
        let hits = [Hit {
            record: &r,
            similarity: 0.9,
        }];
        let p = inject(Stage::FunctionSelection, plan(Phase::FunctionPhase), &hits).unwrap();
        let text = compose(&p).unwrap().system_text;
        assert!(text.contains("check_price"));
        assert!(text.contains("player a"));
        assert!(matches!(
            inject(Stage::FunctionSelection, plan(Phase::DialoguePhase), &hits),
            Err(MemoryError::PhaseMismatch { .. })
        ));
    }

    #[test]
    fn dialogue_drafting_keeps_similarity_order() {
        let idx = index();
        let hits = idx.retrieve(&unit(&[1.0, 0.2]), 2, -1.0).unwrap();
        let p = inject(Stage::DialogueDrafting, plan(Phase::DialoguePhase), &hits).unwrap();
        let text = compose(&p).unwrap().system_text;
        let first = text.find(&hits[0].record.npc_text).unwrap();
        let second = text.find(&hits[1].record.npc_text).unwrap();
        assert!(first < second);
    }
}
