//! Runs the pipeline over a corpus and scores the predictions.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, TaskInstance};
use crate::gateway::{Backend, BudgetProfile, MockBackend, MockScript};
use crate::memory::{EmbeddingProvider, RetrievalIndex};
use crate::metrics::{
    acc_args, acc_name, aggregate, bleu4, canonical_arguments, column_name, embed_f1, key, weighted_score, word_f1,
    FunctionCallRecord, MetricError, TokenEmbeddingSequence, TokenSequence, Weights,
};
use crate::pipeline::{run_turn, Retrieval, RetrievalConfig, TurnConfig, DEFAULT_HISTORY_WINDOW};
use crate::prompt::{StrategyId, TemplateSet};
use crate::toolbox::{format_tool_calls, ToolCall, ToolRegistry};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("corpus has no instances")]
    EmptyCorpus,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("instance {id}: {message}")]
    Instance { id: String, message: String },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

pub struct EvalOptions<'a> {
    pub profile: BudgetProfile,
    pub function_strategies: Vec<StrategyId>,
    pub dialogue_strategies: Vec<StrategyId>,
    pub weights: Weights,
    /// Worker threads; `None` uses one per logical CPU.
    pub workers: Option<usize>,
    pub history_window: usize,
    pub retrieval: Option<(&'a RetrievalIndex, &'a RetrievalConfig)>,
}

impl EvalOptions<'_> {
    pub fn new(profile: BudgetProfile) -> Self {
        Self {
            profile,
            function_strategies: Vec::new(),
            dialogue_strategies: Vec::new(),
            weights: Weights::default(),
            workers: None,
            history_window: DEFAULT_HISTORY_WINDOW,
            retrieval: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub id: String,
    pub metrics: BTreeMap<String, f64>,
    pub predicted_calls: Vec<ToolCall>,
    pub npc_text: String,
    pub calls_made: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: u8,
    pub per_instance: Vec<InstanceRow>,
    /// Macro averages over instances.
    pub corpus: BTreeMap<String, f64>,
    pub weights: Weights,
    pub task_scores: TaskScores,
    /// Overall score when both tasks are scored, otherwise the single task score.
    pub aggregate: f64,
    /// Display names for the metric keys.
    pub columns: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn task1_keys() -> [&'static str; 3] {
    [key::ACC_NAME, key::ACC_ARGS, key::FUNCTION_EMBED_F1]
}

fn task2_keys() -> [&'static str; 3] {
    [key::BLEU4, key::WORD_F1, key::EMBED_F1]
}

/// Script that answers with the instance's gold calls and gold reply.
pub fn gold_script(inst: &TaskInstance) -> MockScript {
    let calls = inst.gold_functions.as_deref().unwrap_or_default();
    let reply = inst.gold_response.as_deref().unwrap_or_default();
    MockScript::from_texts([format_tool_calls(calls).as_str(), reply])
}

/// Script that answers with no calls and an empty reply.
pub fn empty_script() -> MockScript {
    MockScript::from_texts(["[]", ""])
}

fn call_text(calls: &[ToolCall]) -> String {
    calls
        .iter()
        .map(|c| format!("{} {}", c.name, canonical_arguments(c)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Greedy embedding F1 over the tokens of two texts; both empty scores 1,
/// one empty scores 0.
fn text_embed_f1(provider: &dyn EmbeddingProvider, pred: &str, reference: &str) -> Result<f64, MetricError> {
    let p = TokenSequence::tokenize(pred);
    let r = TokenSequence::tokenize(reference);
    match (p.is_empty(), r.is_empty()) {
        (true, true) => Ok(1.0),
        (true, false) | (false, true) => Ok(0.0),
        _ => {
            let p = TokenEmbeddingSequence::embed(provider, p)?;
            let r = TokenEmbeddingSequence::embed(provider, r)?;
            Ok(embed_f1(&p, &r)?.f1)
        }
    }
}

fn score_instance(
    task: u8,
    inst: &TaskInstance,
    calls: &[ToolCall],
    npc_text: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<BTreeMap<String, f64>, MetricError> {
    let mut m = BTreeMap::new();
    if matches!(task, 1 | 3) {
        let gold = inst.gold_functions.as_deref().unwrap_or_default();
        let pred = [FunctionCallRecord::from_calls(calls)];
        let refs = [FunctionCallRecord::from_calls(gold)];
        m.insert(key::ACC_NAME.to_string(), acc_name(&pred, &refs)?);
        m.insert(key::ACC_ARGS.to_string(), acc_args(&pred, &refs)?);
        m.insert(
            key::FUNCTION_EMBED_F1.to_string(),
            text_embed_f1(provider, &call_text(calls), &call_text(gold))?,
        );
    }
    if matches!(task, 2 | 3) {
        let gold = inst.gold_response.as_deref().unwrap_or_default();
        let p = TokenSequence::tokenize(npc_text);
        let r = TokenSequence::tokenize(gold);
        m.insert(key::BLEU4.to_string(), bleu4(&p, &r).score);
        m.insert(key::WORD_F1.to_string(), word_f1(&p, &r));
        let e = if p.is_empty() { 0.0 } else { text_embed_f1(provider, npc_text, gold)? };
        m.insert(key::EMBED_F1.to_string(), e);
    }
    Ok(m)
}

fn run_instance<'b>(
    corpus_task: u8,
    inst: &TaskInstance,
    backend_for: &(dyn Fn(&TaskInstance) -> Box<dyn Backend + 'b> + Sync),
    provider: &dyn EmbeddingProvider,
    templates: &TemplateSet,
    opts: &EvalOptions<'_>,
) -> Result<InstanceRow, EvalError> {
    let inst_err = |message: String| EvalError::Instance {
        id: inst.id.clone(),
        message,
    };
    let session = inst
        .session(Vec::new(), &opts.profile.id)
        .map_err(|e| inst_err(e.to_string()))?;
    let backend = backend_for(inst);
    let registry = ToolRegistry::for_role(&inst.npc.role);
    let cfg = TurnConfig {
        function_strategies: &opts.function_strategies,
        dialogue_strategies: &opts.dialogue_strategies,
        registry: &registry,
        knowledge: &inst.knowledge,
        retrieval: opts.retrieval.map(|(index, config)| Retrieval {
            index,
            provider,
            config,
        }),
        backend: backend.as_ref(),
        profile: &opts.profile,
        templates,
        history_window: opts.history_window,
        events: None,
    };
    let (calls, npc_text, calls_made, error) = match run_turn(&session, &inst.player_text, &cfg) {
        Ok((_, out)) => (out.tool_calls, out.npc_text, out.ledger.calls_made, None),
        Err(failed) => {
            log::warn!("instance {}: {failed}", inst.id);
            let p = failed.partial;
            (p.tool_calls, String::new(), p.ledger.calls_made, Some(failed.error.to_string()))
        }
    };
    let metrics = score_instance(corpus_task, inst, &calls, &npc_text, provider)?;
    Ok(InstanceRow {
        id: inst.id.clone(),
        metrics,
        predicted_calls: calls,
        npc_text,
        calls_made,
        error,
    })
}

/// Evaluates every instance, in parallel on a bounded pool. Failed turns
/// are scored as empty predictions and keep their error in the row.
pub fn evaluate<'b>(
    corpus: &Corpus,
    backend_for: &(dyn Fn(&TaskInstance) -> Box<dyn Backend + 'b> + Sync),
    provider: &dyn EmbeddingProvider,
    templates: &TemplateSet,
    opts: &EvalOptions<'_>,
) -> Result<EvalReport, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    opts.weights.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.workers {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build().map_err(|e| EvalError::Pool(e.to_string()))?;
    let rows: Vec<InstanceRow> = pool.install(|| {
        corpus
            .instances
            .par_iter()
            .map(|inst| run_instance(corpus.task, inst, backend_for, provider, templates, opts))
            .collect::<Result<_, _>>()
    })?;
    build_report(corpus.task, rows, opts.weights.clone())
}

/// Corpus averages, task scores and aggregate from scored rows.
pub fn build_report(task: u8, per_instance: Vec<InstanceRow>, weights: Weights) -> Result<EvalReport, EvalError> {
    if per_instance.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let n = per_instance.len() as f64;
    let mut corpus: BTreeMap<String, f64> = BTreeMap::new();
    for row in &per_instance {
        for (k, v) in &row.metrics {
            *corpus.entry(k.clone()).or_insert(0.0) += v;
        }
    }
    for v in corpus.values_mut() {
        *v /= n;
    }
    let (task1, task2, agg) = match task {
        3 => {
            let a = aggregate(&corpus, &corpus, &weights)?;
            (Some(a.task1), Some(a.task2), a.overall)
        }
        1 => {
            let s = weighted_score(&corpus, &weights.task1, "task1")?;
            (Some(s), None, s)
        }
        _ => {
            let s = weighted_score(&corpus, &weights.task2, "task2")?;
            (None, Some(s), s)
        }
    };
    let columns = task1_keys()
        .into_iter()
        .chain(task2_keys())
        .chain(["task1", "task2", "overall"])
        .map(|k| (k.to_string(), column_name(k).to_string()))
        .collect();
    Ok(EvalReport {
        task,
        per_instance,
        corpus,
        weights,
        task_scores: TaskScores { task1, task2 },
        aggregate: agg,
        columns,
    })
}

/// Backend factory replaying each instance's gold outputs.
pub fn gold_backends() -> impl Fn(&TaskInstance) -> Box<dyn Backend> + Sync {
    |inst: &TaskInstance| Box::new(MockBackend::new(gold_script(inst))) as Box<dyn Backend>
}

/// Backend factory answering every instance with nothing.
pub fn empty_backends() -> impl Fn(&TaskInstance) -> Box<dyn Backend> + Sync {
    |_: &TaskInstance| Box::new(MockBackend::new(empty_script())) as Box<dyn Backend>
}
