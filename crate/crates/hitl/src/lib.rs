//! HTTP session service that puts real people on either side of a dialogue:
//! as the user talking to the current agent (charged as an agent-user
//! dialogue, cost 1) or as the agent serving the simulated user (a
//! demonstration, cost 2).
//!
//! In training mode every session is charged through a [`TrainingLink`]
//! before it opens, and its experience is committed back when it closes.
//! Standalone mode skips the ledger entirely.

pub mod session;
pub mod sink;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bcs_core::agent::DqnAgent;
use bcs_core::domain::{DialogueAct, Speaker, UserGoal};
use bcs_core::env::DialogueEnv;
use bcs_core::kb::KbRow;
use bcs_core::render::render_act;
use bcs_core::schema::Slot;
use bcs_core::transcript;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

pub use session::{Role, Session, SessionError, Status};
pub use sink::{RunStatus, SessionRecord, TrainingLink};

/// Rows returned by knowledge-base lookups.
const KB_RESULT_LIMIT: usize = 20;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Inactivity after which an open session fails.
    pub timeout: Duration,
    /// Where closed sessions' transcripts are written, if anywhere.
    pub transcript_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(600),
            transcript_dir: None,
            seed: 0,
        }
    }
}

pub enum Mode {
    Standalone,
    Training(TrainingLink),
}

pub struct AppState {
    env: DialogueEnv,
    goals: Vec<UserGoal>,
    agent: RwLock<Arc<DqnAgent>>,
    sessions: Mutex<HashMap<String, Session>>,
    mode: Mode,
    config: ServiceConfig,
    rng: Mutex<ChaCha8Rng>,
}

impl AppState {
    pub fn new(env: DialogueEnv, goals: Vec<UserGoal>, agent: DqnAgent, mode: Mode, config: ServiceConfig) -> Arc<Self> {
        let rng = Mutex::new(ChaCha8Rng::seed_from_u64(config.seed));
        Arc::new(Self {
            env,
            goals,
            agent: RwLock::new(Arc::new(agent)),
            sessions: Mutex::new(HashMap::new()),
            mode,
            config,
            rng,
        })
    }

    /// Swaps in a newer policy for sessions created from now on.
    pub fn set_agent(&self, agent: DqnAgent) {
        *self.agent.write().expect("agent lock") = Arc::new(agent);
    }

    /// Fails every open session idle for longer than the timeout. Returns
    /// how many were closed.
    pub fn sweep(&self) -> usize {
        let now = Instant::now();
        let mut sessions = self.sessions.lock().expect("session lock");
        let mut closed = 0;
        for session in sessions.values_mut() {
            if now.duration_since(session.last_activity()) > self.config.timeout && session.expire(&self.env) {
                self.finish(session);
                closed += 1;
            }
        }
        closed
    }

    /// Hands a closed session to the training run and writes its transcript.
    fn finish(&self, session: &Session) {
        if let (Mode::Training(link), Some(route)) = (&self.mode, session.charged_route()) {
            let _ = link.commit(SessionRecord {
                session_id: session.id.clone(),
                route,
                success: session.status() == Status::Success,
                experiences: session.experiences().to_vec(),
            });
        }
        self.persist(session);
    }

    fn persist(&self, session: &Session) {
        let Some(dir) = &self.config.transcript_dir else {
            return;
        };
        let result = std::fs::create_dir_all(dir)
            .map_err(bcs_core::Error::from)
            .and_then(|()| transcript::save(&dir.join(format!("{}.jsonl", session.id)), session.transcript()))
            .and_then(|()| {
                let meta = serde_json::json!({
                    "id": session.id,
                    "role": session.role,
                    "goal": session.goal,
                    "status": session.status(),
                    "feedback": session.feedback(),
                    "turns": session.state().turn,
                    "charged": session.charged,
                });
                let text = serde_json::to_string_pretty(&meta)?;
                std::fs::write(dir.join(format!("{}.json", session.id)), text)?;
                Ok(())
            });
        if let Err(e) = result {
            eprintln!("failed to write transcript for session {}: {e}", session.id);
        }
    }

    fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> T) -> Result<T, ApiError> {
        let mut sessions = self.sessions.lock().expect("session lock");
        let session = sessions.get_mut(id).ok_or(ApiError::NotFound)?;
        if session.status() == Status::Open
            && session.last_activity().elapsed() > self.config.timeout
            && session.expire(&self.env)
        {
            self.finish(session);
        }
        Ok(f(session))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("no such session")]
    NotFound,
    #[error("{0}")]
    Rejected(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("{0}")]
    BadRequest(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self {
            ApiError::NotFound => StatusCode::NOT_FOUND,
            ApiError::Rejected(_) => StatusCode::CONFLICT,
            ApiError::Session(SessionError::Malformed(_)) | ApiError::BadRequest(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Session(_) => StatusCode::CONFLICT,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub role: Role,
    /// Goal for a human user; sampled when absent.
    #[serde(default)]
    pub goal: Option<UserGoal>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LineView {
    pub turn: u32,
    pub speaker: Speaker,
    pub act: DialogueAct,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub role: Role,
    pub status: Status,
    pub turn: u32,
    pub turn_owner: Option<Speaker>,
    /// Shown to human users only.
    pub goal: Option<UserGoal>,
    pub transcript: Vec<LineView>,
    /// Current search results, shown to human agents only.
    pub kb_results: Option<Vec<KbRow>>,
    pub kb_match_count: usize,
    pub feedback: Option<bool>,
    pub charged: bool,
}

#[derive(Debug, Deserialize)]
pub struct PostAct {
    pub act: DialogueAct,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ActResponse {
    pub reply: Option<LineView>,
    pub status: Status,
    pub terminal: bool,
}

#[derive(Debug, Deserialize)]
pub struct Feedback {
    pub success: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeedbackAck {
    pub feedback: bool,
    pub status: Status,
}

#[derive(Debug, Deserialize)]
pub struct KbQuery {
    /// `slot:value` pairs separated by commas; the session's tracked
    /// constraints when absent.
    pub constraints: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct KbResults {
    pub count: usize,
    pub rows: Vec<KbRow>,
}

#[derive(Debug, Deserialize)]
pub struct OpenEpoch {
    pub budget: u64,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/act", post(post_act))
        .route("/sessions/{id}/feedback", post(post_feedback))
        .route("/sessions/{id}/kb", get(search_kb))
        .route("/run", get(run_status))
        .route("/run/epoch", post(open_epoch))
        .with_state(state)
}

fn view(state: &AppState, session: &Session) -> SessionView {
    let tracked = session.state();
    let kb_results = (session.role == Role::HumanAgent).then(|| {
        state
            .env
            .kb
            .query(&tracked.constraints())
            .map(|rows| rows.into_iter().take(KB_RESULT_LIMIT).cloned().collect())
            .unwrap_or_default()
    });
    SessionView {
        id: session.id.clone(),
        role: session.role,
        status: session.status(),
        turn: tracked.turn,
        turn_owner: session.turn_owner(),
        goal: (session.role == Role::HumanUser).then(|| session.goal.clone()),
        transcript: session.transcript().iter().map(line_view).collect(),
        kb_results,
        kb_match_count: tracked.kb_match_count,
        feedback: session.feedback(),
        charged: session.charged,
    }
}

fn line_view(line: &transcript::TranscriptLine) -> LineView {
    LineView {
        turn: line.turn,
        speaker: line.act.speaker,
        act: line.act.clone(),
        text: render_act(&line.act),
    }
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(request): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    if let Some(goal) = &request.goal {
        if request.role == Role::HumanAgent {
            return Err(ApiError::BadRequest("human agents serve a sampled goal".into()));
        }
        goal.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
    }
    let charged = match &state.mode {
        Mode::Standalone => false,
        Mode::Training(link) => {
            link.reserve(request.role.route())
                .await
                .map_err(|e| ApiError::Rejected(e.to_string()))?
                .map_err(ApiError::Rejected)?;
            true
        }
    };
    let (goal, seed) = {
        let mut rng = state.rng.lock().expect("rng lock");
        let goal = match request.goal {
            Some(goal) => goal,
            None if state.goals.is_empty() => return Err(ApiError::Rejected("no goals loaded".into())),
            None => state.goals[rng.random_range(0..state.goals.len())].clone(),
        };
        (goal, rng.random())
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = match request.role {
        Role::HumanUser => {
            let agent = state.agent.read().expect("agent lock").clone();
            Session::human_user(id.clone(), &state.env, goal, agent, charged)
        }
        Role::HumanAgent => Session::human_agent(id.clone(), &state.env, goal, seed, charged)
            .map_err(|e| ApiError::BadRequest(e.to_string()))?,
    };
    let body = view(&state, &session);
    state.sessions.lock().expect("session lock").insert(id, session);
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    state.with_session(&id, |session| Json(view(&state, session)))
}

async fn post_act(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(request): Json<PostAct>,
) -> Result<Json<ActResponse>, ApiError> {
    state.with_session(&id, |session| {
        let (reply, closed) = session.post(&state.env, request.act)?;
        if closed {
            state.finish(session);
        }
        let reply_line = reply.act.map(|act| {
            let turn = session
                .transcript()
                .iter()
                .rev()
                .find(|l| l.act == act)
                .map_or(session.state().turn, |l| l.turn);
            line_view(&transcript::TranscriptLine { turn, act })
        });
        Ok(Json(ActResponse {
            reply: reply_line,
            status: reply.status,
            terminal: closed,
        }))
    })?
}

async fn post_feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(request): Json<Feedback>,
) -> Result<Json<FeedbackAck>, ApiError> {
    state.with_session(&id, |session| {
        let first = session.feedback().is_none();
        let feedback = session.set_feedback(&state.env, request.success)?;
        if first {
            if let (Mode::Training(link), true) = (&state.mode, session.charged) {
                let _ = link.amend(session.id.clone(), feedback, state.env.max_turns());
            }
            state.persist(session);
        }
        Ok(Json(FeedbackAck {
            feedback,
            status: session.status(),
        }))
    })?
}

fn parse_constraints(text: &str) -> Result<BTreeMap<Slot, String>, ApiError> {
    let mut out = BTreeMap::new();
    for pair in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (slot, value) = pair
            .split_once(':')
            .ok_or_else(|| ApiError::BadRequest(format!("expected slot:value, got `{pair}`")))?;
        let slot: Slot = slot.trim().parse().map_err(|e: bcs_core::Error| ApiError::BadRequest(e.to_string()))?;
        out.insert(slot, value.trim().to_string());
    }
    Ok(out)
}

async fn search_kb(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<KbQuery>,
) -> Result<Json<KbResults>, ApiError> {
    let tracked = state.with_session(&id, |session| session.state().constraints())?;
    let constraints = match &query.constraints {
        Some(text) => parse_constraints(text)?,
        None => tracked,
    };
    let rows = state
        .env
        .kb
        .query(&constraints)
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    Ok(Json(KbResults {
        count: rows.len(),
        rows: rows.into_iter().take(KB_RESULT_LIMIT).cloned().collect(),
    }))
}

async fn run_status(State(state): State<Arc<AppState>>) -> Result<Json<RunStatus>, ApiError> {
    match &state.mode {
        Mode::Standalone => Err(ApiError::Rejected("standalone mode keeps no ledger".into())),
        Mode::Training(link) => link.status().await.map(Json).map_err(|e| ApiError::Rejected(e.to_string())),
    }
}

async fn open_epoch(
    State(state): State<Arc<AppState>>,
    Json(request): Json<OpenEpoch>,
) -> Result<Json<RunStatus>, ApiError> {
    match &state.mode {
        Mode::Standalone => Err(ApiError::Rejected("standalone mode keeps no ledger".into())),
        Mode::Training(link) => link
            .open_epoch(request.budget)
            .await
            .map(Json)
            .map_err(|e| ApiError::Rejected(e.to_string())),
    }
}
