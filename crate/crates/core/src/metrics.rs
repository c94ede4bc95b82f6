//! Function-call and dialogue metrics, and the weighted task aggregate.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{EmbeddingProvider, EmbeddingVector, MemoryError};
use crate::text::tokenize_lower;
use crate::toolbox::{value_text, ToolCall};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("prediction and reference lists differ in length ({preds} vs {refs})")]
    LengthMismatch { preds: usize, refs: usize },
    #[error("no instances to score")]
    NoInstances,
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("embedding sequence is empty")]
    EmptySequence,
    #[error("bad weights: {0}")]
    BadWeights(String),
    #[error("embedding failed: {0}")]
    Embedding(String),
}

/// Function names and canonical argument sets of one instance.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FunctionCallRecord {
    pub names: BTreeSet<String>,
    /// `(name, canonical arguments)` pairs; see [`canonical_arguments`].
    pub args: BTreeSet<(String, String)>,
}

/// Arguments as a JSON object with sorted keys and every value rendered as
/// text: strings verbatim, anything else as compact JSON.
pub fn canonical_arguments(call: &ToolCall) -> String {
    let map: BTreeMap<&str, String> = call
        .arguments
        .iter()
        .map(|(k, v)| (k.as_str(), value_text(v)))
        .collect();
    serde_json::to_string(&map).expect("string map serializes")
}

impl FunctionCallRecord {
    pub fn from_calls(calls: &[ToolCall]) -> Self {
        Self {
            names: calls.iter().map(|c| c.name.clone()).collect(),
            args: calls
                .iter()
                .map(|c| (c.name.clone(), canonical_arguments(c)))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

fn check_lengths<T>(preds: &[T], refs: &[T]) -> Result<(), MetricError> {
    if preds.len() != refs.len() {
        return Err(MetricError::LengthMismatch {
            preds: preds.len(),
            refs: refs.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricError::NoInstances);
    }
    Ok(())
}

fn mean_indicator(hits: impl Iterator<Item = bool>, n: usize) -> f64 {
    hits.filter(|h| *h).count() as f64 / n as f64
}

/// Share of instances whose predicted name set equals the reference set.
pub fn acc_name(preds: &[FunctionCallRecord], refs: &[FunctionCallRecord]) -> Result<f64, MetricError> {
    check_lengths(preds, refs)?;
    Ok(mean_indicator(
        preds.iter().zip(refs).map(|(p, r)| p.names == r.names),
        preds.len(),
    ))
}

/// Share of instances whose canonical argument sets are equal.
pub fn acc_args(preds: &[FunctionCallRecord], refs: &[FunctionCallRecord]) -> Result<f64, MetricError> {
    check_lengths(preds, refs)?;
    Ok(mean_indicator(
        preds.iter().zip(refs).map(|(p, r)| p.args == r.args),
        preds.len(),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence {
    tokens: Vec<String>,
}

impl TokenSequence {
    /// Drops empty tokens.
    pub fn new(tokens: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            tokens: tokens
                .into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty())
                .collect(),
        }
    }

    pub fn tokenize(text: &str) -> Self {
        Self::new(tokenize_lower(text))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn set(&self) -> BTreeSet<&str> {
        self.tokens.iter().map(String::as_str).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuProfile {
    pub p_n: [f64; 4],
    pub c: usize,
    pub r: usize,
    pub bp: f64,
    pub score: f64,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU-4 without smoothing: clipped n-gram precisions for n = 1..4,
/// brevity penalty 1 when the candidate is longer than the reference and
/// `exp(1 - r/c)` otherwise. The score is 0 when any precision is 0, which
/// includes every candidate shorter than four tokens.
pub fn bleu4(candidate: &TokenSequence, reference: &TokenSequence) -> BleuProfile {
    let cand = candidate.tokens();
    let refr = reference.tokens();
    let mut p_n = [0.0; 4];
    for (i, p) in p_n.iter_mut().enumerate() {
        let n = i + 1;
        if cand.len() < n {
            continue;
        }
        let ref_counts = ngram_counts(refr, n);
        let clipped: usize = ngram_counts(cand, n)
            .into_iter()
            .map(|(gram, count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        *p = clipped as f64 / (cand.len() + 1 - n) as f64;
    }
    let (c, r) = (cand.len(), refr.len());
    let bp = if c > r {
        1.0
    } else if c == 0 {
        0.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let score = if c < 4 || p_n.iter().any(|p| *p == 0.0) {
        0.0
    } else {
        bp * (p_n.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp()
    };
    BleuProfile {
        p_n,
        c,
        r,
        bp,
        score: score.clamp(0.0, 1.0),
    }
}

/// F1 over token sets. Zero when either side is empty or nothing overlaps.
pub fn word_f1(pred: &TokenSequence, reference: &TokenSequence) -> f64 {
    let p = pred.set();
    let r = reference.set();
    if p.is_empty() || r.is_empty() {
        return 0.0;
    }
    let common = p.intersection(&r).count() as f64;
    let precision = common / p.len() as f64;
    let recall = common / r.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Tokens with one embedding each.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSequence {
    pub tokens: TokenSequence,
    pub embeddings: Vec<EmbeddingVector>,
}

impl TokenEmbeddingSequence {
    pub fn new(tokens: TokenSequence, embeddings: Vec<EmbeddingVector>) -> Result<Self, MetricError> {
        if tokens.len() != embeddings.len() {
            return Err(MetricError::LengthMismatch {
                preds: tokens.len(),
                refs: embeddings.len(),
            });
        }
        if let Some(first) = embeddings.first() {
            if let Some(bad) = embeddings.iter().find(|e| e.dim() != first.dim()) {
                return Err(MetricError::DimMismatch(first.dim(), bad.dim()));
            }
        }
        Ok(Self { tokens, embeddings })
    }

    /// Embeds every token with `provider`.
    pub fn embed(provider: &dyn EmbeddingProvider, tokens: TokenSequence) -> Result<Self, MetricError> {
        let embeddings = tokens
            .tokens()
            .iter()
            .map(|t| provider.embed(t))
            .collect::<Result<Vec<_>, MemoryError>>()
            .map_err(|e| MetricError::Embedding(e.to_string()))?;
        Self::new(tokens, embeddings)
    }

    /// Vectors only, as produced directly by a test or an encoder.
    pub fn from_vectors(vectors: Vec<EmbeddingVector>) -> Result<Self, MetricError> {
        let tokens = TokenSequence::new((0..vectors.len()).map(|i| format!("t{i}")));
        Self::new(tokens, vectors)
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Greedy-matching embedding F1: each predicted token takes its best cosine
/// against the reference (precision) and vice versa (recall).
pub fn embed_f1(pred: &TokenEmbeddingSequence, reference: &TokenEmbeddingSequence) -> Result<PrecisionRecall, MetricError> {
    if pred.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptySequence);
    }
    let (m, n) = (pred.len(), reference.len());
    let mut sim = vec![0.0; m * n];
    for (i, x) in pred.embeddings.iter().enumerate() {
        for (j, y) in reference.embeddings.iter().enumerate() {
            sim[i * n + j] = x
                .cosine(y)
                .map_err(|_| MetricError::DimMismatch(x.dim(), y.dim()))?;
        }
    }
    let precision = (0..m)
        .map(|i| (0..n).map(|j| sim[i * n + j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / m as f64;
    let recall = (0..n)
        .map(|j| (0..m).map(|i| sim[i * n + j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / n as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PrecisionRecall {
        precision,
        recall,
        f1,
    })
}

/// Metric keys used in reports and weight maps.
pub mod key {
    pub const ACC_NAME: &str = "acc_name";
    pub const ACC_ARGS: &str = "acc_args";
    pub const FUNCTION_EMBED_F1: &str = "function_embed_f1";
    pub const BLEU4: &str = "bleu4";
    pub const WORD_F1: &str = "word_f1";
    pub const EMBED_F1: &str = "embed_f1";
}

/// Column headers matching the usual leaderboard layout.
pub fn column_name(metric: &str) -> &'static str {
    match metric {
        key::ACC_NAME => "Function name exact match",
        key::ACC_ARGS => "Function argument exact match",
        key::FUNCTION_EMBED_F1 => "Function BERTScore",
        key::BLEU4 => "BLEU-4",
        key::WORD_F1 => "Word-level F1",
        key::EMBED_F1 => "BERTScore",
        "task1" => "CPDCscore(Task 1)",
        "task2" => "CPDCscore(Task 2)",
        "overall" => "CPDCscore(all)",
        _ => "",
    }
}

/// Component weights inside each task and task weights in the overall score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub task1: BTreeMap<String, f64>,
    pub task2: BTreeMap<String, f64>,
    pub overall: BTreeMap<String, f64>,
}

impl Default for Weights {
    fn default() -> Self {
        let map = |pairs: &[(&str, f64)]| pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let third = 1.0 / 3.0;
        Self {
            task1: map(&[(key::ACC_NAME, 0.5), (key::ACC_ARGS, 0.5)]),
            task2: map(&[(key::BLEU4, third), (key::WORD_F1, third), (key::EMBED_F1, third)]),
            overall: map(&[("task1", 0.5), ("task2", 0.5)]),
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<(), MetricError> {
        for (group, map) in [("task1", &self.task1), ("task2", &self.task2), ("overall", &self.overall)] {
            if map.is_empty() {
                return Err(MetricError::BadWeights(format!("{group} has no components")));
            }
            if map.values().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(MetricError::BadWeights(format!("{group} has a negative or non-finite weight")));
            }
            let sum: f64 = map.values().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(MetricError::BadWeights(format!("{group} weights sum to {sum}, not 1")));
            }
        }
        for k in self.overall.keys() {
            if k != "task1" && k != "task2" {
                return Err(MetricError::BadWeights(format!("unknown overall component '{k}'")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateScores {
    pub task1: f64,
    pub task2: f64,
    pub overall: f64,
}

/// Weighted sum of the metrics named in `weights`.
pub fn weighted_score(map: &BTreeMap<String, f64>, weights: &BTreeMap<String, f64>, group: &str) -> Result<f64, MetricError> {
    weights
        .iter()
        .map(|(k, w)| {
            map.get(k)
                .map(|v| w * v)
                .ok_or_else(|| MetricError::BadWeights(format!("{group} metric '{k}' is missing")))
        })
        .sum()
}

/// Task scores as weighted sums of their components; the overall score as
/// the weighted combination of the two task scores.
pub fn aggregate(
    task1: &BTreeMap<String, f64>,
    task2: &BTreeMap<String, f64>,
    weights: &Weights,
) -> Result<AggregateScores, MetricError> {
    weights.validate()?;
    let t1 = weighted_score(task1, &weights.task1, "task1")?;
    let t2 = weighted_score(task2, &weights.task2, "task2")?;
    let tasks: BTreeMap<String, f64> = [("task1".to_string(), t1), ("task2".to_string(), t2)].into();
    let overall = weighted_score(&tasks, &weights.overall, "overall")?;
    Ok(AggregateScores {
        task1: t1,
        task2: t2,
        overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(calls: &[ToolCall]) -> FunctionCallRecord {
        FunctionCallRecord::from_calls(calls)
    }

    fn seq(text: &str) -> TokenSequence {
        TokenSequence::new(text.split_whitespace())
    }

    fn vecs(rows: &[&[f64]]) -> TokenEmbeddingSequence {
        TokenEmbeddingSequence::from_vectors(
            rows.iter().map(|r| EmbeddingVector::new(r.to_vec()).unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn name_accuracy_cases() {
        let cd = ToolCall::new("check_description", [("item_name", "Man Gauche")]);
        let sell = ToolCall::new("sell_item", [("item_name", "Man Gauche")]);
        assert_eq!(acc_name(&[rec(&[cd.clone()])], &[rec(&[cd.clone()])]).unwrap(), 1.0);
        assert_eq!(acc_name(&[rec(&[])], &[rec(&[sell.clone()])]).unwrap(), 0.0);
        let preds = [rec(&[cd.clone()]), rec(&[sell.clone()]), rec(&[])];
        let refs = [rec(&[cd.clone()]), rec(&[sell.clone()]), rec(&[cd])];
        assert!((acc_name(&preds, &refs).unwrap() - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(
            acc_name(&preds[..1], &refs),
            Err(MetricError::LengthMismatch { preds: 1, refs: 3 })
        );
        assert_eq!(acc_name(&[], &[]), Err(MetricError::NoInstances));
    }

    #[test]
    fn argument_accuracy_is_strict_but_order_free() {
        let a = ToolCall::new("sell_item", [("item_name", serde_json::json!("Long Sword")), ("quantity", serde_json::json!(2))]);
        let mut reordered = ToolCall::new("sell_item", Vec::<(String, String)>::new());
        reordered.arguments.insert("quantity".into(), serde_json::json!(2));
        reordered.arguments.insert("item_name".into(), serde_json::json!("Long Sword"));
        assert_eq!(acc_args(&[rec(&[a.clone()])], &[rec(&[reordered])]).unwrap(), 1.0);
        let other = ToolCall::new("sell_item", [("item_name", serde_json::json!("Long sword")), ("quantity", serde_json::json!(2))]);
        assert_eq!(acc_args(&[rec(&[a.clone()])], &[rec(&[other])]).unwrap(), 0.0);
        assert_eq!(canonical_arguments(&a), r#"{"item_name":"Long Sword","quantity":"2"}"#);
    }

    #[test]
    fn bleu_cases() {
        let five = seq("the blade is very sharp");
        let p = bleu4(&five, &five);
        assert_eq!(p.score, 1.0);
        assert_eq!(p.bp, 1.0);
        assert_eq!(bleu4(&seq("a b c d"), &seq("w x y z")).score, 0.0);
        let p = bleu4(&seq("a b c d"), &seq("a b c d e"));
        assert_eq!(p.p_n, [1.0; 4]);
        assert_eq!((p.c, p.r), (4, 5));
        assert!((p.score - (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-12);
        assert!((p.score - 0.77880).abs() < 1e-4);
        assert_eq!(bleu4(&seq("a b c"), &seq("a b c")).score, 0.0);
        assert_eq!(bleu4(&seq(""), &seq("a b c d")).score, 0.0);
    }

    #[test]
    fn bleu_clips_repeated_ngrams() {
        let p = bleu4(&seq("the the the the"), &seq("the cat sat down"));
        assert_eq!(p.p_n[0], 0.25);
        assert_eq!(p.score, 0.0);
    }

    #[test]
    fn word_f1_cases() {
        assert_eq!(word_f1(&seq("a b c"), &seq("a b c")), 1.0);
        assert_eq!(word_f1(&seq("a b"), &seq("c d")), 0.0);
        assert!((word_f1(&seq("a b c"), &seq("b c d")) - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(word_f1(&seq(""), &seq("a")), 0.0);
    }

    #[test]
    fn embed_f1_cases() {
        let id = vecs(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let s = embed_f1(&id, &id).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let s = embed_f1(&vecs(&[&[1.0, 0.0]]), &vecs(&[&[0.0, 1.0]])).unwrap();
        assert_eq!(s.f1, 0.0);
        let s = embed_f1(&vecs(&[&[1.0, 0.0]]), &vecs(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.5);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-9);
        let empty = TokenEmbeddingSequence::from_vectors(vec![]).unwrap();
        assert_eq!(embed_f1(&empty, &id), Err(MetricError::EmptySequence));
        assert!(matches!(
            embed_f1(&vecs(&[&[1.0]]), &id),
            Err(MetricError::DimMismatch(1, 2))
        ));
    }

    #[test]
    fn aggregate_matches_published_arithmetic() {
        let single = |k: &str| -> BTreeMap<String, f64> { [(k.to_string(), 1.0)].into() };
        let weights = Weights {
            task1: single(key::ACC_NAME),
            task2: single(key::BLEU4),
            ..Weights::default()
        };
        for (t1, t2, all) in [(0.587, 0.615, 0.601), (0.422, 0.598, 0.510)] {
            let s = aggregate(
                &[(key::ACC_NAME.to_string(), t1)].into(),
                &[(key::BLEU4.to_string(), t2)].into(),
                &weights,
            )
            .unwrap();
            assert_eq!(s.overall, all);
        }
    }

    #[test]
    fn aggregate_endpoints_and_bad_weights() {
        let ones = |keys: &[&str]| -> BTreeMap<String, f64> { keys.iter().map(|k| (k.to_string(), 1.0)).collect() };
        let s = aggregate(
            &ones(&[key::ACC_NAME, key::ACC_ARGS]),
            &ones(&[key::BLEU4, key::WORD_F1, key::EMBED_F1]),
            &Weights::default(),
        )
        .unwrap();
        assert!((s.overall - 1.0).abs() < 1e-12);
        let mut bad = Weights::default();
        bad.task1.insert(key::ACC_NAME.into(), 0.7);
        assert!(matches!(
            aggregate(&ones(&[key::ACC_NAME, key::ACC_ARGS]), &ones(&[key::BLEU4]), &bad),
            Err(MetricError::BadWeights(_))
        ));
    }
}
