//! HTTP front end for an [`Agent`].
//!
//! Turns on one session are serialized by a per-session lock; different
//! sessions run concurrently on the blocking pool.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dialoguekit::context::EntityMention;
use dialoguekit::runtime::{Agent, ExecutedAction, LogLine, RuntimeError, Session, TurnTrace};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

type Shared = Arc<Mutex<Session>>;

pub struct AppState {
    agent: Agent,
    sessions: RwLock<HashMap<String, Shared>>,
    next: AtomicU64,
    log_dir: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    pub code: &'static str,
    pub message: String,
    #[serde(skip)]
    status: StatusCode,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
            status,
        }
    }

    fn not_found(id: &str) -> Self {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "session_not_found",
            format!("no session {id}"),
        )
    }

    fn internal(message: impl ToString) -> Self {
        ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            message.to_string(),
        )
    }
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::SessionEnded(_) => {
                ApiError::new(StatusCode::GONE, "session_ended", e.to_string())
            }
            e => ApiError::internal(e),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
    pub welcome_text: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct UtteranceRequest {
    pub utterance: String,
}

#[derive(Debug, Deserialize)]
pub struct DebugQuery {
    #[serde(default)]
    pub debug: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct UtteranceResponse {
    pub agent_text: String,
    pub executed_actions: Vec<ExecutedAction>,
    pub entities: Vec<EntityMention>,
    pub ended: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub debug: Option<TurnTrace>,
}

#[derive(Debug, Serialize)]
pub struct SessionLog {
    pub session_id: String,
    pub ended: bool,
    pub lines: Vec<LogLine>,
}

fn session_number(id: &str) -> Option<u64> {
    id.strip_prefix('s')?.parse().ok()
}

impl AppState {
    /// Build the state, reloading every session log found in `log_dir`.
    pub fn new(agent: Agent, log_dir: PathBuf) -> Result<Self, RuntimeError> {
        std::fs::create_dir_all(&log_dir)
            .map_err(|e| RuntimeError::Log(format!("{}: {e}", log_dir.display())))?;
        let mut sessions = HashMap::new();
        let mut next = 1;
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&log_dir)
            .map_err(|e| RuntimeError::Log(format!("{}: {e}", log_dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        entries.sort();
        for path in entries {
            let session = Session::load(&path)?;
            if let Some(n) = session_number(&session.id) {
                next = next.max(n + 1);
            }
            sessions.insert(session.id.clone(), Arc::new(Mutex::new(session)));
        }
        Ok(AppState {
            agent,
            sessions: RwLock::new(sessions),
            next: AtomicU64::new(next),
            log_dir,
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map").len()
    }

    fn get(&self, id: &str) -> Result<Shared, ApiError> {
        self.sessions
            .read()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/utterances", post(utterance))
        .route("/sessions/{id}/log", get(session_log))
        .with_state(state)
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "schema": state.agent.schema().name,
        "sessions": state.session_count(),
    }))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
) -> Result<Json<CreatedSession>, ApiError> {
    let n = state.next.fetch_add(1, Ordering::SeqCst);
    let id = format!("s{n:06}");
    let worker = state.clone();
    let sid = id.clone();
    let (session, welcome) = tokio::task::spawn_blocking(move || {
        worker.agent.create_session(&sid, n, Some(&worker.log_dir))
    })
    .await
    .map_err(ApiError::internal)??;
    state
        .sessions
        .write()
        .expect("session map")
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok(Json(CreatedSession {
        session_id: id,
        welcome_text: welcome,
    }))
}

async fn utterance(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(query): Query<DebugQuery>,
    body: Result<Json<UtteranceRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<UtteranceResponse>, ApiError> {
    let Json(request) =
        body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    if request.utterance.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "bad_request",
            "utterance is empty",
        ));
    }
    let shared = state.get(&id)?;
    let mut guard = shared.lock_owned().await;
    if !guard.is_active() {
        return Err(RuntimeError::SessionEnded(id).into());
    }
    let worker = state.clone();
    let (guard, result) = tokio::task::spawn_blocking(move || {
        let result = worker
            .agent
            .handle_utterance(&mut guard, &request.utterance);
        (guard, result)
    })
    .await
    .map_err(ApiError::internal)?;
    drop(guard);
    let turn = result?;
    let debug = matches!(query.debug.as_deref(), Some("1" | "true"));
    Ok(Json(UtteranceResponse {
        agent_text: turn.text,
        executed_actions: turn.actions,
        entities: turn.debug.mentions.clone(),
        ended: turn.ended,
        debug: debug.then_some(turn.debug),
    }))
}

async fn session_log(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionLog>, ApiError> {
    let shared = state.get(&id)?;
    let session = shared.lock().await;
    let path = session
        .log_path()
        .ok_or_else(|| ApiError::internal("session has no log"))?;
    let lines = read_log(path).map_err(ApiError::internal)?;
    Ok(Json(SessionLog {
        session_id: id,
        ended: !session.is_active(),
        lines,
    }))
}

fn read_log(path: &Path) -> Result<Vec<LogLine>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect()
}

/// Serve until Ctrl-C or SIGTERM; in-flight requests are allowed to finish.
pub async fn serve(agent: Agent, host: &str, port: u16, log_dir: PathBuf) -> anyhow::Result<()> {
    let state = Arc::new(AppState::new(agent, log_dir)?);
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    eprintln!(
        "listening on {} ({} sessions reloaded)",
        listener.local_addr()?,
        state.session_count()
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
