//! JSON-over-HTTP session service.
//!
//! Sessions created here run in interactive mode: nothing happens until a
//! client posts guidance or asks for the next turn. Observers follow a
//! session by long-polling its event stream with `after=<last seen seq>`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use forge_core::dialogue::{
    self, apply_steering, open_session, AgentBindings, DialogueError, SessionConfig, SteeringCommand,
    DEFAULT_GUIDANCE_LIBRARY,
};
use forge_core::events::{EventLog, SessionEvent};
use forge_core::registry::CultureId;
use forge_core::{CultureRegistry, DialogueSession, Gateway, Gender, Mode, SeedCorpus, SeedDatum, SessionStatus, Turn};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::watch;

/// Upper bound on a single long-poll wait.
pub const MAX_POLL: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server stopped: {0}")]
    Serve(std::io::Error),
}

/// Error body returned with every non-2xx status.
#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

impl From<DialogueError> for ApiError {
    fn from(e: DialogueError) -> Self {
        let status = match &e {
            DialogueError::SessionClosed => StatusCode::CONFLICT,
            DialogueError::Backend(_) => StatusCode::BAD_GATEWAY,
            DialogueError::WrongMode(_) | DialogueError::Precondition(_) => StatusCode::BAD_REQUEST,
            DialogueError::Transcript { .. } | DialogueError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("no session {id:?}"))
}

struct Live {
    session: DialogueSession,
    log: EventLog,
}

struct Slot {
    live: Mutex<Live>,
    last_seq: watch::Sender<u64>,
}

impl Slot {
    /// Runs `f` on the session, then publishes any new events.
    fn with<T>(&self, f: impl FnOnce(&mut DialogueSession) -> T) -> T {
        let mut live = self.live.lock().expect("session lock");
        let out = f(&mut live.session);
        let Live { session, log } = &mut *live;
        if log.sync(session) > 0 {
            self.last_seq.send_replace(log.last_sequence());
        }
        out
    }
}

/// Shared service state.
pub struct AppState {
    registry: CultureRegistry,
    corpus: SeedCorpus,
    gateway: Arc<Gateway>,
    bindings: AgentBindings,
    presets: Vec<String>,
    transcripts: Option<PathBuf>,
    sessions: Mutex<BTreeMap<String, Arc<Slot>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(registry: CultureRegistry, corpus: SeedCorpus, gateway: Gateway, bindings: AgentBindings) -> Self {
        AppState {
            registry,
            corpus,
            gateway: Arc::new(gateway),
            bindings,
            presets: DEFAULT_GUIDANCE_LIBRARY.iter().map(|s| s.to_string()).collect(),
            transcripts: None,
            sessions: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    /// Replaces the guidance presets offered to clients.
    pub fn with_presets(mut self, presets: Vec<String>) -> Self {
        self.presets = presets;
        self
    }

    /// Writes each session's transcript into `dir` once it closes.
    pub fn with_transcript_dir(mut self, dir: PathBuf) -> Self {
        self.transcripts = Some(dir);
        self
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.sessions.lock().expect("registry lock").get(id).cloned().ok_or_else(|| not_found(id))
    }

    fn persist_if_closed(&self, session: &DialogueSession) {
        if let (Some(dir), false) = (&self.transcripts, session.is_open()) {
            if let Err(e) = std::fs::create_dir_all(dir).map_err(DialogueError::from).and_then(|_| {
                dialogue::write_transcript(session, dir, "live")
            }) {
                log::warn!("session {}: transcript not written: {e}", session.session_id);
            }
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct CreateSession {
    /// Seed from the loaded corpus.
    #[serde(default)]
    pub seed_id: Option<String>,
    /// Inline seed, used when `seed_id` is absent.
    #[serde(default)]
    pub seed: Option<SeedDatum>,
    /// Overrides the seed's target culture.
    #[serde(default)]
    pub culture: Option<CultureId>,
    #[serde(default)]
    pub delegate_gender: Option<Gender>,
    #[serde(default)]
    pub contact_gender: Option<Gender>,
    #[serde(default)]
    pub max_turns: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub seed_id: String,
    pub culture: CultureId,
    pub status: SessionStatus,
    pub turns: usize,
    pub last_sequence: u64,
}

#[derive(Debug, Deserialize)]
pub struct EventsQuery {
    #[serde(default)]
    pub after: u64,
    #[serde(default)]
    pub timeout_ms: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EventsPage {
    pub events: Vec<SessionEvent>,
    pub last_sequence: u64,
    pub status: SessionStatus,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GuidanceBody {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StepResult {
    /// The appended turn; absent when the session ended instead.
    pub turn: Option<Turn>,
    pub status: SessionStatus,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/guidance", post(guidance))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/close", post(close))
        .route("/sessions/{id}/transcript", get(transcript))
        .route("/guidance/presets", get(presets))
        .with_state(state)
}

/// Binds `addr` and serves until the process stops.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> Result<(), ServerError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServerError::Bind { addr: addr.to_string(), source })?;
    log::info!("listening on {}", listener.local_addr().map_err(ServerError::Serve)?);
    axum::serve(listener, router(state)).await.map_err(ServerError::Serve)
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let bad = |m: String| ApiError(StatusCode::BAD_REQUEST, m);
    let mut seed = match (&req.seed_id, req.seed) {
        (Some(id), _) => state.corpus.get(id).cloned().ok_or_else(|| not_found(id))?,
        (None, Some(seed)) => seed,
        (None, None) => return Err(bad("either seed_id or seed is required".into())),
    };
    if let Some(culture) = req.culture {
        seed.target_culture = culture;
    }
    seed.validate().map_err(bad)?;
    let (contact, delegate) = state
        .registry
        .resolve_personas(
            &seed.target_culture,
            req.delegate_gender.unwrap_or(Gender::Female),
            req.contact_gender.unwrap_or(Gender::Female),
        )
        .map_err(|e| bad(e.to_string()))?;
    let mut config = SessionConfig::default().with_mode(Mode::Interactive);
    if let Some(n) = req.max_turns {
        config = config.with_max_turns(n);
    }
    let n = state.next_id.fetch_add(1, Ordering::Relaxed);
    let session_id = format!("live-{n:04}");
    let session = open_session(session_id.clone(), seed, contact, delegate, &state.registry, config)?;
    let mut log = EventLog::new(session_id.clone());
    log.sync(&session);
    let (tx, _) = watch::channel(log.last_sequence());
    let slot = Slot { live: Mutex::new(Live { session, log }), last_seq: tx };
    state.sessions.lock().expect("registry lock").insert(session_id.clone(), Arc::new(slot));
    Ok((StatusCode::CREATED, Json(Created { session_id })))
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<Vec<SessionSummary>> {
    let slots: Vec<Arc<Slot>> = state.sessions.lock().expect("registry lock").values().cloned().collect();
    Json(
        slots
            .iter()
            .map(|slot| {
                let live = slot.live.lock().expect("session lock");
                SessionSummary {
                    session_id: live.session.session_id.clone(),
                    seed_id: live.session.seed.seed_id.clone(),
                    culture: live.session.seed.target_culture.clone(),
                    status: live.session.status,
                    turns: live.session.turns.len(),
                    last_sequence: live.log.last_sequence(),
                }
            })
            .collect(),
    )
}

/// Returns events after `after` at once if any exist, otherwise waits up to
/// `timeout_ms` for new ones.
async fn events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Json<EventsPage>, ApiError> {
    let slot = state.slot(&id)?;
    let mut rx = slot.last_seq.subscribe();
    if *rx.borrow_and_update() <= q.after && q.timeout_ms > 0 {
        let wait = Duration::from_millis(q.timeout_ms).min(MAX_POLL);
        let _ = tokio::time::timeout(wait, rx.wait_for(|seq| *seq > q.after)).await;
    }
    let live = slot.live.lock().expect("session lock");
    Ok(Json(EventsPage {
        events: live.log.after(q.after).to_vec(),
        last_sequence: live.log.last_sequence(),
        status: live.session.status,
    }))
}

async fn steer(state: Arc<AppState>, id: String, command: SteeringCommand) -> Result<Json<StepResult>, ApiError> {
    let slot = state.slot(&id)?;
    let worker = state.clone();
    tokio::task::spawn_blocking(move || {
        slot.with(|session| {
            let result = apply_steering(session, command, &worker.gateway, &worker.bindings);
            worker.persist_if_closed(session);
            result.map(|turn| StepResult { turn, status: session.status })
        })
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map(Json)
    .map_err(ApiError::from)
}

async fn guidance(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<GuidanceBody>,
) -> Result<Json<StepResult>, ApiError> {
    steer(state, id, SteeringCommand::InjectGuidance { text: body.text }).await
}

async fn advance(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<StepResult>, ApiError> {
    steer(state, id, SteeringCommand::Advance).await
}

async fn close(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<StepResult>, ApiError> {
    steer(state, id, SteeringCommand::Terminate).await
}

async fn transcript(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let body = dialogue::render_transcript(&slot.live.lock().expect("session lock").session, "live");
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn presets(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(state.presets.clone())
}
