//! Command line and HTTP front end for the npcforge pipeline.

pub mod chat;
pub mod commands;
pub mod config;
pub mod serve;

use std::path::Path;

use thiserror::Error;

pub use config::{BackendKind, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    World(#[from] npcforge::world::WorldError),
    #[error(transparent)]
    Corpus(#[from] npcforge::corpus::CorpusError),
    #[error(transparent)]
    Memory(#[from] npcforge::memory::MemoryError),
    #[error(transparent)]
    Prompt(#[from] npcforge::prompt::PromptError),
    #[error(transparent)]
    Eval(#[from] npcforge::harness::EvalError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
