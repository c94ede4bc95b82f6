//! Batch commands: eval, index build, datagen, stats.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use npcforge::corpus::{corpus_stats, generate_instances, generation_profile, Corpus, CorpusStats, GenerationContext, GenerationSpec};
use npcforge::corpus::TaskInstance;
use npcforge::gateway::Backend;
use npcforge::harness::{empty_backends, evaluate, gold_backends, EvalOptions, EvalReport};
use npcforge::memory::RetrievalIndex;
use npcforge::metrics::{column_name, key};
use npcforge::pipeline::phase_strategies;
use npcforge::toolbox::ToolRegistry;

use crate::config::{BackendKind, RunConfig};
use crate::{write_file, CliError};

type BackendFactory<'a> = Box<dyn Fn(&TaskInstance) -> Box<dyn Backend> + Sync + 'a>;

fn eval_backends(cfg: &RunConfig) -> Result<BackendFactory<'static>, CliError> {
    Ok(match cfg.backend.kind {
        BackendKind::MockGold => Box::new(gold_backends()),
        BackendKind::MockEmpty => Box::new(empty_backends()),
        BackendKind::Remote => {
            let remote = Arc::new(cfg.remote());
            Box::new(move |_: &TaskInstance| Box::new(Arc::clone(&remote)) as Box<dyn Backend>)
        }
        BackendKind::MockScript => {
            return Err(CliError::Config(
                "eval needs mock-gold, mock-empty or remote; a single script cannot serve parallel instances".into(),
            ))
        }
    })
}

/// Runs the corpus through the pipeline, writes the report when an output
/// path is configured and returns it.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let corpus = cfg.corpus()?;
    let templates = cfg.templates()?;
    let provider = cfg.provider();
    let index = cfg.index()?;
    let backends = eval_backends(cfg)?;
    let (function_strategies, dialogue_strategies) = phase_strategies(&cfg.strategies);
    let opts = EvalOptions {
        function_strategies,
        dialogue_strategies,
        weights: cfg.weights.clone(),
        workers: cfg.workers,
        history_window: cfg.history_window,
        retrieval: index.as_ref().map(|i| (i, &cfg.retrieval)),
        ..EvalOptions::new(cfg.profile()?)
    };
    let report = evaluate(&corpus, &*backends, &provider, &templates, &opts)?;
    if let Some(path) = &cfg.outputs.report {
        write_file(path, &report.to_json())?;
    }
    Ok(report)
}

/// Console table with one column per scored metric, then the task and
/// overall scores.
pub fn render_table(report: &EvalReport, label: &str) -> String {
    let mut cols: Vec<(String, f64)> = Vec::new();
    let metrics: &[&str] = match report.task {
        1 => &[key::ACC_NAME, key::ACC_ARGS, key::FUNCTION_EMBED_F1],
        2 => &[key::BLEU4, key::WORD_F1, key::EMBED_F1],
        _ => &[key::ACC_NAME, key::ACC_ARGS, key::BLEU4, key::WORD_F1, key::EMBED_F1],
    };
    for m in metrics {
        if let Some(v) = report.corpus.get(*m) {
            cols.push((column_name(m).to_string(), *v));
        }
    }
    for (k, v) in [("task1", report.task_scores.task1), ("task2", report.task_scores.task2)] {
        if let Some(v) = v {
            cols.push((column_name(k).to_string(), v));
        }
    }
    if report.task == 3 {
        cols.push((column_name("overall").to_string(), report.aggregate));
    }
    let first = label.len().max("Run".len());
    let mut out = String::new();
    let _ = write!(out, "{:<first$}", "Run");
    for (name, _) in &cols {
        let _ = write!(out, " | {name}");
    }
    out.push('\n');
    let _ = write!(out, "{}", "-".repeat(first));
    for (name, _) in &cols {
        let _ = write!(out, "-+-{}", "-".repeat(name.len()));
    }
    out.push('\n');
    let _ = write!(out, "{label:<first$}");
    for (name, v) in &cols {
        let _ = write!(out, " | {:>w$.3}", v, w = name.len());
    }
    out.push('\n');
    let failed = report.per_instance.iter().filter(|r| r.error.is_some()).count();
    let _ = writeln!(out, "{} instances, {failed} failed turns", report.per_instance.len());
    out
}

/// Label for the table row: strategy set and track.
pub fn run_label(cfg: &RunConfig) -> String {
    let strategies: Vec<&str> = cfg.strategies.iter().map(|s| s.label()).collect();
    let set = if strategies.is_empty() { "ZeroShot".to_string() } else { strategies.join("+") };
    format!("{set} ({})", cfg.track)
}

pub fn cmd_index_build(cfg: &RunConfig, corpus: &Path, out: &Path) -> Result<RetrievalIndex, CliError> {
    let corpus = Corpus::load(corpus)?;
    let source = corpus_source(&corpus);
    let index = RetrievalIndex::build(&cfg.provider(), corpus.record_inputs(&source))?;
    index.save(out)?;
    Ok(index)
}

fn corpus_source(corpus: &Corpus) -> String {
    format!("task{}", corpus.task)
}

pub struct DatagenArgs<'a> {
    pub spec: GenerationSpec,
    pub npc: Option<&'a str>,
    pub scene: Option<&'a str>,
    pub out: &'a Path,
}

pub fn cmd_datagen(cfg: &RunConfig, args: &DatagenArgs<'_>) -> Result<Corpus, CliError> {
    let world = cfg.world()?;
    let npc_id = args.npc.or(cfg.npc.as_deref());
    let npc = match npc_id {
        Some(id) => world.npc(id).ok_or_else(|| CliError::Usage(format!("unknown npc '{id}'")))?,
        None => world.npcs.first().ok_or_else(|| CliError::Usage("world has no npcs".into()))?,
    };
    let scene_id = args.scene.or(cfg.scene.as_deref());
    let scene = match scene_id {
        Some(id) => world.scene(id).ok_or_else(|| CliError::Usage(format!("unknown scene '{id}'")))?,
        None => world.scenes.first().ok_or_else(|| CliError::Usage("world has no scenes".into()))?,
    };
    let ctx = GenerationContext {
        npc: npc.clone(),
        world: world.world_state(scene),
        registry: ToolRegistry::for_role(&npc.role),
        knowledge: world.knowledge_for(npc),
    };
    let backend = cfg.shared_backend()?;
    let instances = generate_instances(&args.spec, &ctx, &cfg.templates()?, &backend, &generation_profile())?;
    let corpus = Corpus::new(args.spec.kind.task(), instances);
    corpus.save(args.out)?;
    Ok(corpus)
}

pub fn cmd_stats(cfg: &RunConfig, corpus: Option<&Path>) -> Result<CorpusStats, CliError> {
    let corpus = match corpus {
        Some(p) => Corpus::load(p)?,
        None => cfg.corpus()?,
    };
    Ok(corpus_stats(&corpus))
}
