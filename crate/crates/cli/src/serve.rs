//! HTTP service under `/v1`.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use npcforge::gateway::{Backend, BudgetProfile, GatewayError};
use npcforge::memory::{HashEmbedder, RetrievalIndex};
use npcforge::pipeline::{phase_strategies, run_turn, Retrieval, RetrievalConfig, RetrievalHits, TurnConfig, TurnError};
use npcforge::prompt::{parse_strategy_list, StrategyId, TemplateSet};
use npcforge::toolbox::{ToolCall, ToolRegistry, ToolResult};
use npcforge::world::{DialogueTurn, KnowledgeEntry, NpcProfile, Scene, Session, WorldDefinition};
use serde::{Deserialize, Deserializer, Serialize};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub npc_id: String,
    /// Defaults to the world's first scene.
    #[serde(default)]
    pub scene: Option<String>,
    /// List or `"D,RW,F"` string; defaults to the server's configured set.
    #[serde(default, deserialize_with = "opt_strategies")]
    pub strategies: Option<Vec<StrategyId>>,
    #[serde(default)]
    pub track: Option<String>,
}

fn opt_strategies<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<StrategyId>>, D::Error> {
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
    parse_strategy_list(&text).map(Some).map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionCreated {
    pub session_id: String,
    pub npc_id: String,
    pub scene: String,
    pub strategies: Vec<StrategyId>,
    pub track: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnRequest {
    pub player_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub calls_made: u32,
    pub tokens_in: usize,
    pub tokens_out: usize,
    /// Call limit of the session's track, absent when unbounded.
    pub max_calls: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnResponse {
    pub npc_text: String,
    pub tool_calls: Vec<ToolCall>,
    pub tool_results: Vec<ToolResult>,
    pub retrieval_hits: RetrievalHits,
    pub budget: Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transcript {
    pub session_id: String,
    pub npc_id: String,
    pub scene: String,
    pub strategies: Vec<StrategyId>,
    pub track: String,
    pub turns: Vec<DialogueTurn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roster {
    pub npcs: Vec<NpcProfile>,
    pub scenes: Vec<Scene>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Health {
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiError {
    pub error: String,
}

type Failure = (StatusCode, Json<ApiError>);
type ApiResult<T> = Result<Json<T>, Failure>;

fn fail(status: StatusCode, message: impl Into<String>) -> Failure {
    (status, Json(ApiError { error: message.into() }))
}

/// Lines of a session's persistence file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Created { scene: String, session: Session },
    Turn { player: DialogueTurn, npc: DialogueTurn },
}

struct Slot {
    session: Mutex<Session>,
    busy: AtomicBool,
    scene: String,
    registry: ToolRegistry,
    knowledge: Vec<KnowledgeEntry>,
    profile: BudgetProfile,
    function_strategies: Vec<StrategyId>,
    dialogue_strategies: Vec<StrategyId>,
}

impl Slot {
    fn new(world: &WorldDefinition, session: Session, scene: String, profile: BudgetProfile) -> Self {
        let (function_strategies, dialogue_strategies) = phase_strategies(&session.strategy_set);
        Self {
            registry: ToolRegistry::for_role(&session.npc.role),
            knowledge: world.knowledge_for(&session.npc),
            session: Mutex::new(session),
            busy: AtomicBool::new(false),
            scene,
            profile,
            function_strategies,
            dialogue_strategies,
        }
    }
}

/// Clears the in-flight flag when the turn finishes, however it finishes.
struct InFlight(Arc<Slot>);

impl Drop for InFlight {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

pub struct AppState {
    world: WorldDefinition,
    templates: TemplateSet,
    backend: Arc<dyn Backend>,
    index: Option<RetrievalIndex>,
    provider: HashEmbedder,
    retrieval: RetrievalConfig,
    history_window: usize,
    default_strategies: Vec<StrategyId>,
    default_track: String,
    sessions: Mutex<HashMap<String, Arc<Slot>>>,
    next_id: AtomicU64,
    persist_dir: Option<PathBuf>,
}

impl AppState {
    pub fn from_config(cfg: &RunConfig, persist_dir: Option<PathBuf>) -> Result<Self, CliError> {
        Self::with_backend(cfg, cfg.shared_backend()?, persist_dir)
    }

    pub fn with_backend(
        cfg: &RunConfig,
        backend: Arc<dyn Backend>,
        persist_dir: Option<PathBuf>,
    ) -> Result<Self, CliError> {
        let state = Self {
            world: cfg.world()?,
            templates: cfg.templates()?,
            backend,
            index: cfg.index()?,
            provider: cfg.provider(),
            retrieval: cfg.retrieval.clone(),
            history_window: cfg.history_window,
            default_strategies: cfg.strategies.clone(),
            default_track: cfg.profile()?.id,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            persist_dir,
        };
        if let Some(dir) = &state.persist_dir {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            state.restore(dir)?;
        }
        Ok(state)
    }

    fn restore(&self, dir: &Path) -> Result<(), CliError> {
        let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        let mut max_id = 0;
        for entry in entries {
            let path = entry.map_err(|e| CliError::io(dir, e))?.path();
            if path.extension().is_none_or(|e| e != "jsonl") {
                continue;
            }
            let (session, scene) = load_session(&path)?;
            let profile = BudgetProfile::preset(&session.budget_profile)
                .ok_or_else(|| CliError::Config(format!("{}: unknown track", path.display())))?;
            if let Some(n) = session.id.strip_prefix("s-").and_then(|n| n.parse::<u64>().ok()) {
                max_id = max_id.max(n);
            }
            let slot = Slot::new(&self.world, session, scene, profile);
            let id = slot.session.lock().unwrap().id.clone();
            self.sessions.lock().unwrap().insert(id, Arc::new(slot));
        }
        self.next_id.store(max_id + 1, Ordering::Relaxed);
        log::info!("restored {} sessions from {}", self.sessions.lock().unwrap().len(), dir.display());
        Ok(())
    }

    fn persist(&self, session_id: &str, record: &Record) {
        let Some(dir) = &self.persist_dir else { return };
        let path = dir.join(format!("{session_id}.jsonl"));
        let line = serde_json::to_string(record).expect("record serializes");
        let result = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = result {
            log::warn!("cannot persist {}: {e}", path.display());
        }
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, Failure> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| fail(StatusCode::NOT_FOUND, format!("unknown session '{id}'")))
    }
}

fn load_session(path: &Path) -> Result<(Session, String), CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let bad = |message: String| CliError::Config(format!("{}: {message}", path.display()));
    let mut state: Option<(Session, String)> = None;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
        state = Some(match (state, record) {
            (None, Record::Created { scene, session }) => (session, scene),
            (Some((session, scene)), Record::Turn { player, npc }) => {
                let next = session
                    .append_turn(player)
                    .and_then(|s| s.append_turn(npc))
                    .map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
                (next, scene)
            }
            _ => return Err(bad(format!("line {}: unexpected record", n + 1))),
        });
    }
    state.ok_or_else(|| bad("empty session file".into()))
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, Failure> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| fail(StatusCode::BAD_REQUEST, e.body_text()))
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<SessionCreated> {
    let req = body(payload)?;
    let npc = app
        .world
        .npc(&req.npc_id)
        .ok_or_else(|| fail(StatusCode::BAD_REQUEST, format!("unknown npc_id '{}'", req.npc_id)))?;
    let scene = match &req.scene {
        Some(id) => app.world.scene(id),
        None => app.world.scenes.first(),
    }
    .ok_or_else(|| fail(StatusCode::BAD_REQUEST, format!("unknown scene '{}'", req.scene.clone().unwrap_or_default())))?;
    let track = req.track.as_deref().unwrap_or(&app.default_track);
    let profile = BudgetProfile::preset(track)
        .ok_or_else(|| fail(StatusCode::BAD_REQUEST, format!("unknown track '{track}'")))?;
    let strategies = req.strategies.unwrap_or_else(|| app.default_strategies.clone());

    let id = format!("s-{:04}", app.next_id.fetch_add(1, Ordering::Relaxed));
    let session = Session::new(&id, npc.clone(), app.world.world_state(scene), strategies.clone(), profile.id.clone());
    app.persist(&id, &Record::Created { scene: scene.id.clone(), session: session.clone() });
    let slot = Slot::new(&app.world, session, scene.id.clone(), profile.clone());
    app.sessions.lock().unwrap().insert(id.clone(), Arc::new(slot));
    log::info!("session {id} opened with {}", npc.id);
    Ok(Json(SessionCreated {
        session_id: id,
        npc_id: npc.id.clone(),
        scene: scene.id.clone(),
        strategies,
        track: profile.id,
    }))
}

async fn post_turn(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<TurnRequest>, JsonRejection>,
) -> ApiResult<TurnResponse> {
    let slot = app.slot(&id)?;
    let req = body(payload)?;
    if req.player_text.trim().is_empty() {
        return Err(fail(StatusCode::BAD_REQUEST, "player_text must be non-empty"));
    }
    if slot.busy.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_err() {
        return Err(fail(StatusCode::CONFLICT, format!("session '{id}' already has a turn in flight")));
    }
    let guard = InFlight(slot);
    let state = Arc::clone(&app);
    tokio::task::spawn_blocking(move || {
        let slot = &guard.0;
        let app = &*state;
        let session = slot.session.lock().unwrap().clone();
        let cfg = TurnConfig {
            function_strategies: &slot.function_strategies,
            dialogue_strategies: &slot.dialogue_strategies,
            registry: &slot.registry,
            knowledge: &slot.knowledge,
            retrieval: app.index.as_ref().map(|index| Retrieval {
                index,
                provider: &app.provider,
                config: &app.retrieval,
            }),
            backend: &*app.backend,
            profile: &slot.profile,
            templates: &app.templates,
            history_window: app.history_window,
            events: None,
        };
        let (next, outcome) = run_turn(&session, &req.player_text, &cfg).map_err(|failed| {
            log::warn!("session {}: {failed}", session.id);
            let status = match &failed.error {
                _ if failed.is_timeout() => StatusCode::GATEWAY_TIMEOUT,
                TurnError::EmptyPlayerText => StatusCode::BAD_REQUEST,
                TurnError::Gateway(GatewayError::TransportError { .. }) => StatusCode::BAD_GATEWAY,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            };
            fail(status, failed.to_string())
        })?;
        let new_turns = &next.turns[session.turns.len()..];
        app.persist(
            &session.id,
            &Record::Turn {
                player: new_turns[0].clone(),
                npc: new_turns[1].clone(),
            },
        );
        *slot.session.lock().unwrap() = next;
        Ok(Json(TurnResponse {
            npc_text: outcome.npc_text,
            tool_calls: outcome.tool_calls,
            tool_results: outcome.tool_results,
            retrieval_hits: outcome.retrieval_hits,
            budget: Budget {
                calls_made: outcome.ledger.calls_made,
                tokens_in: outcome.ledger.token_in_total,
                tokens_out: outcome.ledger.token_out_total,
                max_calls: slot.profile.max_calls_per_utterance,
            },
        }))
    })
    .await
    .map_err(|e| fail(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn get_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Transcript> {
    let slot = app.slot(&id)?;
    let session = slot.session.lock().unwrap().clone();
    Ok(Json(Transcript {
        session_id: session.id,
        npc_id: session.npc.id,
        scene: slot.scene.clone(),
        strategies: session.strategy_set,
        track: session.budget_profile,
        turns: session.turns,
    }))
}

async fn npcs(State(app): State<Arc<AppState>>) -> Json<Roster> {
    Json(Roster {
        npcs: app.world.npcs.clone(),
        scenes: app.world.scenes.clone(),
    })
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into() })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/npcs", get(npcs))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/turns", post(post_turn))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: AppState, addr: SocketAddr) -> Result<(), CliError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Usage(format!("cannot bind {addr}: {e}")))?;
    log::info!("listening on http://{addr}/v1");
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Usage(e.to_string()))
}
