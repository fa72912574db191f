//! Live session server: runs the lander and the shared-control filter at a
//! fixed tick for a remote pilot, streams state over a WebSocket, records
//! every trial as a log file and fits new models on request.
//!
//! Routes:
//!
//! - `GET /ws`: the session socket (JSON text frames, see [`protocol`])
//! - `GET /api/sessions`: recorded sessions and their trial counts
//! - `GET /api/models`: registered models and whether they can be flown
//! - anything else: static files from the UI directory, if configured

pub mod mailbox;
pub mod models;
pub mod outbox;
pub mod protocol;
mod session;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{State, WebSocketUpgrade};
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use sharedctl::controller::CostSpec;
use sharedctl::lander::WorldParams;
use tower_http::services::ServeDir;

use crate::models::{ModelInfo, ModelStore};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("server stopped: {0}")]
    Serve(std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub bind: SocketAddr,
    pub world: WorldParams,
    pub cost: CostSpec,
    /// Trial logs land in `logs_dir/<session_id>/trial_NN.json`.
    pub logs_dir: PathBuf,
    pub models_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
    /// Advance one tick per input frame instead of on the wall clock.
    pub lockstep: bool,
    pub tick: Duration,
    pub staleness: Duration,
    /// State frames buffered per client before the oldest are dropped.
    pub frame_queue: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            world: WorldParams::default(),
            cost: CostSpec::default(),
            logs_dir: PathBuf::from("sessions"),
            models_dir: PathBuf::from("models"),
            static_dir: None,
            lockstep: false,
            tick: Duration::from_millis(20),
            staleness: Duration::from_millis(200),
            frame_queue: 64,
        }
    }
}

pub(crate) struct AppState {
    pub cfg: ServeConfig,
    pub models: ModelStore,
    next_session: AtomicU64,
}

impl AppState {
    /// Next unused `session_NNNN` directory name.
    pub fn new_session_id(&self) -> (u64, String) {
        loop {
            let n = self.next_session.fetch_add(1, Ordering::Relaxed);
            let id = format!("session_{n:04}");
            if !self.cfg.logs_dir.join(&id).exists() {
                return (n, id);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub trials: usize,
}

fn list_sessions(dir: &Path) -> Vec<SessionInfo> {
    let Ok(entries) = std::fs::read_dir(dir) else { return Vec::new() };
    let mut out: Vec<SessionInfo> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| {
            let trials = std::fs::read_dir(e.path())
                .map(|it| {
                    it.filter_map(|f| f.ok())
                        .filter(|f| f.file_name().to_string_lossy().starts_with("trial_"))
                        .count()
                })
                .unwrap_or(0);
            SessionInfo { session_id: e.file_name().to_string_lossy().into_owned(), trials }
        })
        .collect();
    out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    out
}

async fn sessions_handler(State(app): State<Arc<AppState>>) -> Json<Vec<SessionInfo>> {
    Json(list_sessions(&app.cfg.logs_dir))
}

async fn models_handler(State(app): State<Arc<AppState>>) -> Json<Vec<ModelInfo>> {
    Json(app.models.list())
}

async fn ws_handler(ws: WebSocketUpgrade, State(app): State<Arc<AppState>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| session::run(socket, app))
}

/// A bound, not yet running server.
pub struct Server {
    listener: tokio::net::TcpListener,
    router: Router,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub async fn run(self) -> Result<(), Error> {
        axum::serve(self.listener, self.router).await.map_err(Error::Serve)
    }
}

/// Prepare directories, load models and bind the listener.
pub async fn bind(cfg: ServeConfig) -> Result<Server, Error> {
    for dir in [&cfg.logs_dir, &cfg.models_dir] {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
    }
    let models =
        ModelStore::open(&cfg.models_dir, &cfg.cost).map_err(|source| Error::Io { path: cfg.models_dir.clone(), source })?;
    let listener = tokio::net::TcpListener::bind(cfg.bind)
        .await
        .map_err(|source| Error::Bind { addr: cfg.bind, source })?;
    let static_dir = cfg.static_dir.clone();
    let app = Arc::new(AppState { cfg, models, next_session: AtomicU64::new(0) });
    let mut router = Router::new()
        .route("/ws", get(ws_handler))
        .route("/api/sessions", get(sessions_handler))
        .route("/api/models", get(models_handler))
        .with_state(app);
    if let Some(dir) = static_dir {
        router = router.fallback_service(ServeDir::new(dir));
    }
    Ok(Server { listener, router })
}

pub async fn serve(cfg: ServeConfig) -> Result<(), Error> {
    bind(cfg).await?.run().await
}
