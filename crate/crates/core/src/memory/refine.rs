//! Rewrite of a drafted reply toward the length of a close golden reply.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Hit;
use crate::gateway::{complete, Backend, BudgetKind, BudgetProfile, CallLedger, CompletionRequest, GatewayError};
use crate::prompt::{Phase, RenderedPrompt, TemplateSet};
use crate::text::word_count;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub threshold: f64,
    /// Propagate a call-budget refusal instead of keeping the draft.
    #[serde(default)]
    pub strict: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            threshold: 0.8,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    BelowThreshold,
    BudgetExhausted,
    CallFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RefineOutcome {
    /// No rewrite was requested or it failed; the draft stands.
    Skipped { reason: SkipReason },
    Rewritten { text: String },
    /// The rewrite came back shorter than the target band; the draft stands.
    Rejected { text: String },
}

impl RefineOutcome {
    /// Text to use as the NPC reply.
    pub fn final_text(&self, draft: &str) -> String {
        match self {
            RefineOutcome::Rewritten { text } => text.clone(),
            _ => draft.to_string(),
        }
    }
}

/// Inclusive word-count band within 30% of `reference_words`.
pub fn target_word_band(reference_words: usize) -> (usize, usize) {
    let min = (7 * reference_words).div_ceil(10).max(1);
    let max = (13 * reference_words / 10).max(min);
    (min, max)
}

/// Asks the backend to rewrite `draft` in the tone and length of the hit's
/// NPC reply, when the hit is similar enough and the call budget allows.
/// Overlong rewrites are cut to the band's upper bound.
pub fn refine(
    draft: &str,
    best_hit: Hit<'_>,
    config: &RefineConfig,
    templates: &TemplateSet,
    backend: &dyn Backend,
    ledger: &mut CallLedger,
    profile: &BudgetProfile,
) -> Result<RefineOutcome, GatewayError> {
    if best_hit.similarity < config.threshold {
        return Ok(RefineOutcome::Skipped {
            reason: SkipReason::BelowThreshold,
        });
    }
    if !ledger.can_call(profile) {
        if config.strict {
            return Err(GatewayError::BudgetExceeded(BudgetKind::Calls));
        }
        return Ok(RefineOutcome::Skipped {
            reason: SkipReason::BudgetExhausted,
        });
    }
    let reference = best_hit.record.npc_text.trim();
    let (min, max) = target_word_band(word_count(reference));
    let slots: BTreeMap<String, String> = [
        ("min_words", min.to_string()),
        ("max_words", max.to_string()),
        ("reference", reference.to_string()),
        ("draft", draft.trim().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let system_text = match templates.get("refine/refine").map(|t| t.render(&slots)) {
        Some(Ok(text)) => text,
        Some(Err(e)) => {
            log::warn!("refine template failed to render: {e}");
            return Ok(RefineOutcome::Skipped {
                reason: SkipReason::CallFailed,
            });
        }
        None => {
            log::warn!("refine template missing");
            return Ok(RefineOutcome::Skipped {
                reason: SkipReason::CallFailed,
            });
        }
    };
    let request = CompletionRequest {
        rendered: RenderedPrompt::new(system_text, Vec::new()),
        tool_schemas: None,
        max_output_tokens: 4 * max + 16,
        phase: Phase::DialoguePhase,
    };
    let response = match complete(backend, &request, ledger, profile) {
        Ok(r) => r,
        Err(GatewayError::BudgetExceeded(kind)) if config.strict => {
            return Err(GatewayError::BudgetExceeded(kind))
        }
        Err(e) => {
            log::warn!("refine call failed, keeping draft: {e}");
            return Ok(RefineOutcome::Skipped {
                reason: SkipReason::CallFailed,
            });
        }
    };
    let words: Vec<&str> = response.text.split_whitespace().collect();
    if words.len() < min {
        return Ok(RefineOutcome::Rejected {
            text: response.text,
        });
    }
    Ok(RefineOutcome::Rewritten {
        text: words[..words.len().min(max)].join(" "),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockScript};
    use crate::memory::{EmbeddingVector, RetrievalRecord};

    fn record(npc_text: &str) -> RetrievalRecord {
        RetrievalRecord {
            id: "r".into(),
            player_text: "p".into(),
            npc_text: npc_text.into(),
            gold_functions: None,
            embedding: EmbeddingVector::new(vec![1.0]).unwrap(),
            source: String::new(),
        }
    }

    fn run(similarity: f64, reply: &str, profile: &BudgetProfile, spent: usize) -> (RefineOutcome, u32) {
        let r = record("Sure thing, that blade is a fine pick for you today.");
        let mut texts = vec!["x"; spent];
        texts.push(reply);
        let backend = MockBackend::new(MockScript::from_texts(texts));
        let mut ledger = CallLedger::new("u");
        let filler = CompletionRequest {
            rendered: RenderedPrompt::new("s".into(), vec![]),
            tool_schemas: None,
            max_output_tokens: 5,
            phase: Phase::DialoguePhase,
        };
        for _ in 0..spent {
            complete(&backend, &filler, &mut ledger, profile).unwrap();
        }
        let hit = Hit { record: &r, similarity };
        let out = refine(
            "A long draft reply.",
            hit,
            &RefineConfig::default(),
            &TemplateSet::builtin(),
            &backend,
            &mut ledger,
            profile,
        )
        .unwrap();
        (out, ledger.calls_made())
    }

    #[test]
    fn band_uses_integer_bounds() {
        assert_eq!(target_word_band(10), (7, 13));
        assert_eq!(target_word_band(1), (1, 1));
        assert_eq!(target_word_band(0), (1, 1));
        assert_eq!(target_word_band(3), (3, 3));
    }

    #[test]
    fn below_threshold_keeps_draft() {
        let (out, calls) = run(0.5, "short reply", &BudgetProfile::gpu_track(), 0);
        assert_eq!(out, RefineOutcome::Skipped { reason: SkipReason::BelowThreshold });
        assert_eq!(out.final_text("draft"), "draft");
        assert_eq!(calls, 0);
    }

    #[test]
    fn spent_budget_skips() {
        let (out, calls) = run(0.99, "short reply", &BudgetProfile::api_track(), 2);
        assert_eq!(out, RefineOutcome::Skipped { reason: SkipReason::BudgetExhausted });
        assert_eq!(calls, 2);
    }

    #[test]
    fn rewrite_within_band_is_used() {
        let reply = "That blade suits you well, a fine pick for today.";
        let (out, calls) = run(0.99, reply, &BudgetProfile::gpu_track(), 0);
        assert_eq!(out, RefineOutcome::Rewritten { text: reply.into() });
        assert_eq!(calls, 1);
    }

    #[test]
    fn overlong_rewrite_is_cut_and_short_one_rejected() {
        let long = vec!["word"; 40].join(" ");
        let (out, _) = run(0.99, &long, &BudgetProfile::gpu_track(), 0);
        let text = out.final_text("draft");
        assert_eq!(word_count(&text), target_word_band(11).1);
        let (out, _) = run(0.99, "short reply", &BudgetProfile::gpu_track(), 0);
        assert!(matches!(out, RefineOutcome::Rejected { .. }));
        assert_eq!(out.final_text("draft"), "draft");
    }

    #[test]
    fn strict_mode_propagates_budget_refusal() {
        let r = record("reference words here");
        let backend = MockBackend::new(MockScript::default());
        let profile = BudgetProfile {
            max_calls_per_utterance: Some(0),
            ..BudgetProfile::api_track()
        };
        let mut ledger = CallLedger::new("u");
        let config = RefineConfig {
            strict: true,
            ..RefineConfig::default()
        };
        let err = refine(
            "draft",
            Hit { record: &r, similarity: 1.0 },
            &config,
            &TemplateSet::builtin(),
            &backend,
            &mut ledger,
            &profile,
        )
        .unwrap_err();
        assert_eq!(err, GatewayError::BudgetExceeded(BudgetKind::Calls));
    }
}
