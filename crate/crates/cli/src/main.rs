use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use npcforge::corpus::{GenerationKind, GenerationSpec};
use npcforge::pipeline::{EventSink, JsonlSink};
use npcforge_cli::chat::{run_chat, ChatContext};
use npcforge_cli::commands::{cmd_datagen, cmd_eval, cmd_index_build, cmd_stats, render_table, run_label, DatagenArgs};
use npcforge_cli::serve::{serve, AppState};
use npcforge_cli::{BackendKind, RunConfig};

#[derive(Parser)]
#[command(name = "npcforge", version, about = "Task-oriented NPC dialogue pipeline")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory of template overrides named `<template>.txt`.
    #[arg(long, global = true)]
    template_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a corpus and print the leaderboard row.
    Eval {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Report output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured backend (mock-gold, mock-empty, remote).
        #[arg(long)]
        backend: Option<String>,
    },
    /// Talk to an NPC in the terminal.
    Chat {
        #[arg(long)]
        npc: Option<String>,
        #[arg(long)]
        scene: Option<String>,
        /// Print pipeline events after each reply.
        #[arg(long)]
        verbose: bool,
        /// Where to save the session at exit.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Append-only session log directory.
        #[arg(long)]
        persist_dir: Option<PathBuf>,
    },
    /// Retrieval index tools.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Generate a corpus with the configured backend.
    Datagen {
        /// multi-turn, multi-turn-reasoning or function-calling.
        #[arg(long, value_parser = parse_kind)]
        kind: GenerationKind,
        /// Defaults to the kind's full-size count.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        npc: Option<String>,
        #[arg(long)]
        scene: Option<String>,
        #[arg(long)]
        template_id: Option<String>,
        /// Invalid generations tolerated before giving up.
        #[arg(long)]
        retry_cap: Option<usize>,
    },
    /// Print corpus statistics as JSON.
    Stats {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum IndexAction {
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<GenerationKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        format!("unknown kind '{s}' (expected multi-turn, multi-turn-reasoning or function-calling)")
    })
}

fn parse_backend(s: &str) -> anyhow::Result<BackendKind> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .with_context(|| format!("unknown backend '{s}'"))
}

fn events_sink(path: Option<&Path>) -> anyhow::Result<Option<JsonlSink>> {
    path.map(|p| {
        let file = std::fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
        Ok(JsonlSink::new(BufWriter::new(file)))
    })
    .transpose()
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    if cli.template_dir.is_some() {
        cfg.template_dir = cli.template_dir;
    }
    match cli.command {
        Command::Eval { corpus, out, backend } => {
            if corpus.is_some() {
                cfg.corpus = corpus;
            }
            if out.is_some() {
                cfg.outputs.report = out;
            }
            if let Some(b) = backend {
                cfg.backend.kind = parse_backend(&b)?;
            }
            let report = cmd_eval(&cfg)?;
            print!("{}", render_table(&report, &run_label(&cfg)));
            if let Some(p) = &cfg.outputs.report {
                println!("report written to {}", p.display());
            }
        }
        Command::Chat { npc, scene, verbose, transcript } => {
            let world = cfg.world()?;
            let id = format!("chat-{}", std::process::id());
            let npc = npc.or_else(|| cfg.npc.clone());
            let scene = scene.or_else(|| cfg.scene.clone());
            let ctx = ChatContext::new(&world, npc.as_deref(), scene.as_deref(), &id, &cfg, cfg.shared_backend()?)?;
            let sink = events_sink(cfg.outputs.events.as_deref())?;
            let stdin = std::io::stdin().lock();
            let mut stdout = std::io::stdout().lock();
            let session = run_chat(&ctx, stdin, &mut stdout, verbose, sink.as_ref().map(|s| s as &dyn EventSink))?;
            stdout.flush()?;
            if let Some(path) = transcript.or(cfg.outputs.transcript.clone()) {
                let json = serde_json::to_string_pretty(&session)? + "\n";
                std::fs::write(&path, json).with_context(|| format!("cannot write {}", path.display()))?;
                println!("transcript saved to {}", path.display());
            }
        }
        Command::Serve { addr, persist_dir } => {
            let state = AppState::from_config(&cfg, persist_dir)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(state, addr))?;
        }
        Command::Index { action: IndexAction::Build { corpus, out } } => {
            let index = cmd_index_build(&cfg, &corpus, &out)?;
            println!("indexed {} records into {}", index.len(), out.display());
        }
        Command::Datagen { kind, count, out, npc, scene, template_id, retry_cap } => {
            let mut spec = GenerationSpec::new(kind, count.unwrap_or(kind.default_count()));
            spec.template_id = template_id;
            if let Some(cap) = retry_cap {
                spec.retry_cap = cap;
            }
            let args = DatagenArgs {
                spec,
                npc: npc.as_deref(),
                scene: scene.as_deref(),
                out: &out,
            };
            let corpus = cmd_datagen(&cfg, &args)?;
            println!("wrote {} instances to {}", corpus.len(), out.display());
        }
        Command::Stats { corpus } => {
            let stats = cmd_stats(&cfg, corpus.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
    }
    Ok(())
}
