//! `RunConfig`: the TOML file every command reads.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use npcforge::corpus::Corpus;
use npcforge::gateway::{Backend, BudgetProfile, MockBackend, MockScript, RemoteBackend, RemoteConfig};
use npcforge::memory::{EmbeddingProvider, HashEmbedder, RetrievalIndex};
use npcforge::metrics::Weights;
use npcforge::pipeline::{RetrievalConfig, DEFAULT_HISTORY_WINDOW};
use npcforge::prompt::{parse_strategy_list, StrategyId, TemplateSet};
use npcforge::world::WorldDefinition;
use serde::{Deserialize, Deserializer};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// Each eval instance answers with its own gold outputs.
    MockGold,
    /// Every call answers with nothing.
    MockEmpty,
    /// Replies taken in order from a script file.
    MockScript,
    /// OpenAI-compatible endpoint from `NPCFORGE_API_BASE`.
    #[default]
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub script: Option<PathBuf>,
    pub model: Option<String>,
    pub native_tools: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub report: Option<PathBuf>,
    pub transcript: Option<PathBuf>,
    pub events: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Falls back to the bundled demo world.
    pub world: Option<PathBuf>,
    /// Falls back to the bundled demo corpus.
    pub corpus: Option<PathBuf>,
    #[serde(deserialize_with = "strategies")]
    pub strategies: Vec<StrategyId>,
    pub track: String,
    pub backend: BackendConfig,
    pub index: Option<PathBuf>,
    pub retrieval: RetrievalConfig,
    pub weights: Weights,
    pub outputs: Outputs,
    pub workers: Option<usize>,
    pub history_window: usize,
    pub template_dir: Option<PathBuf>,
    /// Default NPC and scene for `chat`.
    pub npc: Option<String>,
    pub scene: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            world: None,
            corpus: None,
            strategies: Vec::new(),
            track: npcforge::gateway::API_TRACK.into(),
            backend: BackendConfig::default(),
            index: None,
            retrieval: RetrievalConfig::default(),
            weights: Weights::default(),
            outputs: Outputs::default(),
            workers: None,
            history_window: DEFAULT_HISTORY_WINDOW,
            template_dir: None,
            npc: None,
            scene: None,
        }
    }
}

/// Accepts `"D,RW,F"` or `["D", "RW", "F"]`.
fn strategies<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<StrategyId>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        List(Vec<String>),
    }
    let text = match Raw::deserialize(d)? {
        Raw::Text(s) => s,
        Raw::List(v) => v.join(","),
    };
    parse_strategy_list(&text).map_err(serde::de::Error::custom)
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.world,
            &mut cfg.corpus,
            &mut cfg.index,
            &mut cfg.template_dir,
            &mut cfg.backend.script,
            &mut cfg.outputs.report,
            &mut cfg.outputs.transcript,
            &mut cfg.outputs.events,
        ] {
            resolve(base, p);
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    fn check(&self) -> Result<(), CliError> {
        self.profile()?;
        self.weights.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.backend.kind == BackendKind::MockScript && self.backend.script.is_none() {
            return Err(CliError::Config("backend.script is required for mock-script".into()));
        }
        if !(-1.0..=1.0).contains(&self.retrieval.min_sim) || self.retrieval.k == 0 {
            return Err(CliError::Config("retrieval needs k >= 1 and min_sim in [-1, 1]".into()));
        }
        Ok(())
    }

    pub fn profile(&self) -> Result<BudgetProfile, CliError> {
        BudgetProfile::preset(&self.track).ok_or_else(|| CliError::Config(format!("unknown track '{}'", self.track)))
    }

    pub fn world(&self) -> Result<WorldDefinition, CliError> {
        Ok(match &self.world {
            Some(p) => WorldDefinition::load(p)?,
            None => WorldDefinition::from_json(npcforge::demo::WORLD_JSON)?,
        })
    }

    pub fn corpus(&self) -> Result<Corpus, CliError> {
        Ok(match &self.corpus {
            Some(p) => Corpus::load(p)?,
            None => Corpus::from_json(npcforge::demo::CORPUS_JSON)?,
        })
    }

    pub fn templates(&self) -> Result<TemplateSet, CliError> {
        Ok(match &self.template_dir {
            Some(dir) => TemplateSet::from_dir(dir)?,
            None => TemplateSet::builtin(),
        })
    }

    pub fn provider(&self) -> HashEmbedder {
        HashEmbedder::new(HashEmbedder::DEFAULT_DIM)
    }

    /// The configured index, checked against the embedding provider.
    pub fn index(&self) -> Result<Option<RetrievalIndex>, CliError> {
        let Some(path) = &self.index else { return Ok(None) };
        let index = RetrievalIndex::load(path)?;
        let provider = self.provider();
        if index.provider_id != provider.id() {
            return Err(CliError::Config(format!(
                "index was built with '{}' but this build embeds with '{}'",
                index.provider_id,
                provider.id()
            )));
        }
        Ok(Some(index))
    }

    /// One backend shared by every session, for `chat` and `serve`.
    pub fn shared_backend(&self) -> Result<Arc<dyn Backend>, CliError> {
        match self.backend.kind {
            BackendKind::MockScript => {
                let path = self.backend.script.as_ref().expect("checked at load");
                let script = MockScript::load(path).map_err(|e| CliError::io(path, e))?;
                let mut backend = MockBackend::new(script);
                if self.backend.native_tools.unwrap_or(false) {
                    backend = backend.with_native_tools();
                }
                Ok(Arc::new(backend))
            }
            BackendKind::Remote => Ok(Arc::new(self.remote())),
            other => Err(CliError::Config(format!(
                "backend {other:?} only applies to eval; use mock-script or remote"
            ))),
        }
    }

    pub fn remote(&self) -> RemoteBackend {
        let mut cfg = RemoteConfig::from_env(self.backend.model.as_deref());
        if let Some(native) = self.backend.native_tools {
            cfg.native_tools = native;
        }
        RemoteBackend::new(cfg)
    }
}
