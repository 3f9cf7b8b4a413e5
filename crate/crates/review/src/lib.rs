//! HTTP triage queue for patches the contrast filter routed to review.
//!
//! A curator pulls pending patches from `/api/queue`, looks at
//! `/api/patch/<id>.png`, and posts keep/reject decisions to `/api/verdict`.
//! Decisions are durable before the response goes out (see [`store`]).

pub mod store;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use forge_core::filter::patch_path;
use forge_core::DatasetError;
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

pub use store::{Applied, Decision, PatchStats, Progress, QueueItem, Refused, ReviewStore};

pub const DEFAULT_QUEUE_LIMIT: usize = 50;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("port {port} unavailable: {reason}")]
    PortUnavailable { port: u16, reason: String },
    #[error("patch directory {0} does not exist")]
    MissingPatchDir(PathBuf),
    #[error(transparent)]
    Manifest(#[from] DatasetError),
    #[error("io: {0}")]
    Io(String),
}

type Shared = Arc<Mutex<Option<ReviewStore>>>;

/// A running server. Dropping the handle without calling [`shutdown`]
/// leaves the write-ahead log in place; the next start replays it.
///
/// [`shutdown`]: ReviewServer::shutdown
pub struct ReviewServer {
    addr: SocketAddr,
    store: Shared,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ReviewServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Finish in-flight requests, fold the log into the manifest and remove it.
    pub async fn shutdown(mut self) -> Result<(), ReviewError> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        match (&mut self.task).await {
            Ok(Ok(())) => {}
            Ok(Err(e)) => return Err(ReviewError::Io(e.to_string())),
            Err(e) => return Err(ReviewError::Io(e.to_string())),
        }
        let store = self.store.lock().expect("store lock").take();
        match store {
            Some(store) => store.close(),
            None => Ok(()),
        }
    }

    /// Stop serving immediately without touching the manifest, as a crash would.
    pub async fn abort(self) {
        self.task.abort();
        let _ = self.task.await;
        drop(self.store.lock().expect("store lock").take());
    }

    /// Resolves when the server stops on its own (listener error).
    pub async fn wait(&mut self) -> Result<(), ReviewError> {
        match (&mut self.task).await {
            Ok(r) => r.map_err(|e| ReviewError::Io(e.to_string())),
            Err(e) => Err(ReviewError::Io(e.to_string())),
        }
    }
}

/// Bind `127.0.0.1:<port>` (0 picks a free port) and start serving.
/// `static_dir`, when given, is served at `/` (the review UI bundle).
pub async fn start_review_server(
    manifest: &Path,
    patch_dir: &Path,
    port: u16,
    static_dir: Option<&Path>,
) -> Result<ReviewServer, ReviewError> {
    let store = {
        let (m, p) = (manifest.to_path_buf(), patch_dir.to_path_buf());
        tokio::task::spawn_blocking(move || ReviewStore::open(&m, &p))
            .await
            .map_err(|e| ReviewError::Io(e.to_string()))??
    };
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
        .await
        .map_err(|e| ReviewError::PortUnavailable {
            port,
            reason: e.to_string(),
        })?;
    let addr = listener.local_addr().map_err(|e| ReviewError::Io(e.to_string()))?;
    let shared: Shared = Arc::new(Mutex::new(Some(store)));
    let app = router(shared.clone(), static_dir);
    let (stop, stopped) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    Ok(ReviewServer {
        addr,
        store: shared,
        stop: Some(stop),
        task,
    })
}

pub fn router(store: Shared, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/queue", get(queue))
        .route("/api/patch/{file}", get(patch_image))
        .route("/api/verdict", post(verdict))
        .route("/api/progress", get(progress))
        .route("/api/export", get(export))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(FALLBACK_PAGE) })),
    }
}

const FALLBACK_PAGE: &str = "<!doctype html><meta charset=\"utf-8\"><title>patch review</title>\
<p>No UI bundle configured. API: <code>GET /api/queue</code>, <code>GET /api/patch/&lt;id&gt;.png</code>, \
<code>POST /api/verdict</code>, <code>GET /api/progress</code>, <code>GET /api/export</code>.</p>";

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn unavailable() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "server is shutting down")
}

#[derive(Deserialize)]
struct QueueParams {
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn queue(State(store): State<Shared>, Query(q): Query<QueueParams>) -> Response {
    let guard = store.lock().expect("store lock");
    let Some(store) = guard.as_ref() else { return unavailable() };
    Json(store.queue(q.offset.unwrap_or(0), q.limit.unwrap_or(DEFAULT_QUEUE_LIMIT))).into_response()
}

async fn progress(State(store): State<Shared>) -> Response {
    let guard = store.lock().expect("store lock");
    let Some(store) = guard.as_ref() else { return unavailable() };
    Json(store.progress()).into_response()
}

async fn export(State(store): State<Shared>) -> Response {
    let guard = store.lock().expect("store lock");
    let Some(store) = guard.as_ref() else { return unavailable() };
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], store.export_csv()).into_response()
}

async fn patch_image(State(store): State<Shared>, UrlPath(file): UrlPath<String>) -> Response {
    let Some(id) = file.strip_suffix(".png") else {
        return error(StatusCode::NOT_FOUND, "patch images are served as <id>.png");
    };
    let path = {
        let guard = store.lock().expect("store lock");
        let Some(store) = guard.as_ref() else { return unavailable() };
        if store.manifest().get(id).is_none() {
            return error(StatusCode::NOT_FOUND, format!("unknown patch {id}"));
        }
        patch_path(store.patch_dir(), id)
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, format!("no image for patch {id}")),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictBody {
    patch_id: String,
    verdict: String,
}

async fn verdict(State(store): State<Shared>, body: Bytes) -> Response {
    let body: VerdictBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
    };
    let Some(decision) = Decision::parse(&body.verdict) else {
        return error(
            StatusCode::BAD_REQUEST,
            format!("verdict must be \"keep\" or \"reject\", got {:?}", body.verdict),
        );
    };
    // The fsync happens under the lock, which serializes writers.
    let outcome = tokio::task::spawn_blocking(move || {
        let mut guard = store.lock().expect("store lock");
        guard.as_mut().map(|s| s.decide(&body.patch_id, decision).map(|r| (body.patch_id, r)))
    })
    .await;
    let (patch_id, result) = match outcome {
        Ok(Some(Ok(v))) => v,
        Ok(None) => return unavailable(),
        Ok(Some(Err(e))) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    match result {
        Ok(applied) => Json(json!({
            "patch_id": patch_id,
            "verdict": decision.verdict(),
            "recorded": applied == Applied::Recorded,
        }))
        .into_response(),
        Err(Refused::UnknownId) => error(StatusCode::NOT_FOUND, format!("unknown patch {patch_id}")),
        Err(Refused::NotPending(current)) => error(
            StatusCode::CONFLICT,
            format!("patch {patch_id} is {}, not needs_review", current.as_str()),
        ),
    }
}
