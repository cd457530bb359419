//! HTTP API over a project workspace.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/sources` | source artifacts with candidate counts, by id |
//! | GET | `/api/candidates?source_id&status&offset&limit` | candidate views, by match count desc then source id, target id |
//! | GET | `/api/taxonomy/node/{id}` | node with breadcrumb and children |
//! | POST | `/api/decisions` | record a verdict |
//! | POST | `/api/runs` | classify and derive candidates |
//! | GET | `/api/metrics?lc_from&lc_to` | sweep curve rows |
//!
//! POST requests carrying an `Idempotency-Key` header are answered once;
//! repeats with the same key get the original response.

mod error;
mod handlers;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex, RwLock};

use axum::routing::{get, post};
use axum::Router;
use tower_http::services::ServeDir;

use ttl_core::store::{Project, StoreError};

pub use error::{ApiError, ErrorCode};

pub struct AppState {
    project: RwLock<Project>,
    running: AtomicBool,
    replies: Mutex<HashMap<String, (u16, serde_json::Value)>>,
}

impl AppState {
    pub fn new(project: Project) -> Arc<AppState> {
        Arc::new(AppState {
            project: RwLock::new(project),
            running: AtomicBool::new(false),
            replies: Mutex::new(HashMap::new()),
        })
    }

    pub fn open(dir: &Path) -> Result<Arc<AppState>, StoreError> {
        Ok(AppState::new(Project::load(dir)?))
    }

    /// Snapshot of the served project.
    pub fn project(&self) -> Project {
        self.project.read().expect("project lock").clone()
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let routes = Router::new()
        .route("/api/sources", get(handlers::sources))
        .route("/api/candidates", get(handlers::candidates))
        .route("/api/taxonomy/node/{id}", get(handlers::taxonomy_node))
        .route("/api/decisions", post(handlers::decide))
        .route("/api/runs", post(handlers::run))
        .route("/api/metrics", get(handlers::metrics));
    let routes = match static_dir {
        Some(dir) => routes.fallback_service(ServeDir::new(dir)),
        None => routes.fallback(handlers::unknown_route),
    };
    routes.with_state(state)
}

/// Serves the project in `dir` until the process is stopped.
pub async fn serve(
    dir: &Path,
    addr: SocketAddr,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let state = AppState::open(dir).map_err(|e| std::io::Error::other(e.to_string()))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir)).await
}
