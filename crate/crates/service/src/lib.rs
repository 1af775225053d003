//! HTTP front end for one annotation session.
//!
//! Every mutating request persists the session file before it answers, so an
//! acknowledged label survives a crash. Session work runs on the blocking
//! pool behind a single mutex; scorer training runs on its own thread inside
//! the session and never holds the lock.

use std::future::Future;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use textloom_core::corpus::RecordId;
use textloom_core::session::{Session, SessionConfig};
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub const DEFAULT_PORT: u16 = 8750;
pub const DEFAULT_BODY_LIMIT: usize = 64 * 1024 * 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub bind: IpAddr,
    /// Zero picks a free port.
    pub port: u16,
    pub session_path: PathBuf,
    pub cors_origins: Vec<String>,
    pub body_limit: usize,
}

impl ServiceConfig {
    pub fn new(session_path: impl Into<PathBuf>) -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: DEFAULT_PORT,
            session_path: session_path.into(),
            cors_origins: Vec::new(),
            body_limit: DEFAULT_BODY_LIMIT,
        }
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.body_limit == 0 {
            return Err(ServiceError::Config("body limit must be positive".into()));
        }
        let dir = match self.session_path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        if !dir.is_dir() {
            return Err(ServiceError::Config(format!("session directory {} does not exist", dir.display())));
        }
        if self.session_path.is_dir() {
            return Err(ServiceError::Config(format!("session path {} is a directory", self.session_path.display())));
        }
        for origin in &self.cors_origins {
            HeaderValue::from_str(origin).map_err(|_| ServiceError::Config(format!("bad CORS origin {origin:?}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("invalid service configuration: {0}")]
    Config(String),
    #[error("cannot load session: {0}")]
    Session(#[from] textloom_core::Error),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Inner {
    session: Mutex<Option<Session>>,
    path: PathBuf,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

/// Error body `{"error":{"code":…,"message":…}}` with an HTTP status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn no_session() -> Self {
        Self::new(StatusCode::CONFLICT, "no_session", "no corpus has been uploaded")
    }
}

impl From<textloom_core::Error> for ApiError {
    fn from(e: textloom_core::Error) -> Self {
        use textloom_core::Error as E;
        let status = match &e {
            E::UnknownRecord(_) => StatusCode::NOT_FOUND,
            E::AlreadyLabeled(_) | E::NotIssued(_) | E::TrainingBusy => StatusCode::CONFLICT,
            E::Io(_) | E::SessionFormat(_) | E::SnapshotFormat(_) | E::NonFiniteLoss { .. } => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(e.status(), "bad_request", e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

impl AppState {
    /// Loads the session file when it exists. Ids that were handed out but
    /// never labeled before the last shutdown become available again.
    pub fn open(path: &Path) -> Result<Self, ServiceError> {
        let session = if path.exists() {
            let mut s = Session::load(path)?;
            s.release_in_flight();
            Some(s)
        } else {
            None
        };
        Ok(Self(Arc::new(Inner { session: Mutex::new(session), path: path.to_path_buf() })))
    }

    /// Runs `f` against the session on the blocking pool.
    async fn with<T, F>(&self, f: F) -> ApiResult<T>
    where
        T: Send + 'static,
        F: FnOnce(&mut Option<Session>, &Path) -> ApiResult<T> + Send + 'static,
    {
        let inner = self.0.clone();
        tokio::task::spawn_blocking(move || {
            let mut guard = inner.session.lock().unwrap_or_else(|p| p.into_inner());
            f(&mut guard, &inner.path)
        })
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
    }

    /// Like `with` for an existing session, saving it after `f` succeeds.
    async fn mutate<T, F>(&self, f: F) -> ApiResult<T>
    where
        T: Send + 'static,
        F: FnOnce(&mut Session) -> ApiResult<T> + Send + 'static,
    {
        self.with(move |slot, path| {
            let session = slot.as_mut().ok_or_else(ApiError::no_session)?;
            let out = f(session)?;
            session.save(path)?;
            Ok(out)
        })
        .await
    }
}

pub fn router(state: AppState, config: &ServiceConfig) -> Router {
    let mut app = Router::new()
        .route("/corpus", post(upload_corpus))
        .route("/batch", get(batch))
        .route("/labels", post(submit_label))
        .route("/stats", get(stats))
        .route("/export", get(export))
        .route("/export/stats", get(export_stats))
        .route("/train", post(train))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(config.body_limit))
        .with_state(state);
    if !config.cors_origins.is_empty() {
        let origins: Vec<HeaderValue> =
            config.cors_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
        app = app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(origins))
                .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    app
}

#[derive(Deserialize)]
struct UploadRequest {
    corpus: String,
    #[serde(default)]
    config: Option<SessionConfig>,
}

async fn upload_corpus(
    State(state): State<AppState>,
    req: Result<Json<UploadRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(req) = req?;
    state
        .with(move |slot, path| {
            let session = Session::create(req.corpus.as_bytes(), req.config.unwrap_or_default())?;
            session.save(path)?;
            let body = json!({
                "records": session.corpus().len(),
                "groups": session.index().groups.len(),
                "sub_clusters": session.index().sub_cluster_count(),
            });
            *slot = Some(session);
            Ok(Json(body))
        })
        .await
}

#[derive(Deserialize)]
struct BatchQuery {
    size: Option<usize>,
}

#[derive(Serialize)]
pub struct BatchEntry {
    pub id: RecordId,
    pub data: String,
    pub suggestion: Option<String>,
}

async fn batch(
    State(state): State<AppState>,
    q: Result<Query<BatchQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Query(q) = q?;
    let size = q.size.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", "size is required"))?;
    state
        .mutate(move |session| {
            let batch = session.request_batch(size)?;
            let entries = batch
                .items
                .into_iter()
                .map(|item| {
                    Ok(BatchEntry {
                        id: item.record_id,
                        data: session.data_text(item.record_id)?,
                        suggestion: item.suggestion.map(|s| s.text),
                    })
                })
                .collect::<textloom_core::Result<Vec<_>>>()?;
            Ok(Json(json!({ "batch": entries })))
        })
        .await
}

#[derive(Deserialize)]
struct LabelRequest {
    id: RecordId,
    text: String,
}

async fn submit_label(
    State(state): State<AppState>,
    req: Result<Json<LabelRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(req) = req?;
    state
        .mutate(move |session| {
            let label = session.submit_label(req.id, &req.text)?;
            Ok(Json(json!({
                "id": label.record_id,
                "source": label.source.as_str(),
                "labeled_count": session.labeled_count(),
            })))
        })
        .await
}

/// Adopts a finished training round, saving only when something changed.
fn refresh(session: &mut Session, path: &Path) -> ApiResult<()> {
    if session.poll_training() {
        session.save(path)?;
    }
    Ok(())
}

async fn stats(State(state): State<AppState>) -> ApiResult<Json<Map<String, Value>>> {
    state
        .with(|slot, path| {
            let session = slot.as_mut().ok_or_else(ApiError::no_session)?;
            refresh(session, path)?;
            Ok(Json(session.stats().into_iter().map(|(k, v)| (k, json!(v))).collect()))
        })
        .await
}

fn text(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], body).into_response()
}

async fn export(State(state): State<AppState>) -> ApiResult<Response> {
    state
        .with(|slot, path| {
            let session = slot.as_mut().ok_or_else(ApiError::no_session)?;
            refresh(session, path)?;
            Ok(text(session.export().to_text(session.corpus())))
        })
        .await
}

async fn export_stats(State(state): State<AppState>) -> ApiResult<Response> {
    state
        .with(|slot, path| {
            let session = slot.as_mut().ok_or_else(ApiError::no_session)?;
            refresh(session, path)?;
            Ok(text(session.export().stats_text()))
        })
        .await
}

async fn train(State(state): State<AppState>) -> ApiResult<(StatusCode, Json<Value>)> {
    state
        .mutate(|session| {
            session.poll_training();
            session.train()?;
            let status = if session.training_running() { "running" } else { "finished" };
            Ok((StatusCode::ACCEPTED, Json(json!({ "status": status, "model_version": session.model().version() }))))
        })
        .await
}

async fn health(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    state
        .with(|slot, _| {
            let labeled = slot.as_ref().map_or(0, Session::labeled_count);
            Ok(Json(json!({ "status": "ok", "labeled_count": labeled, "session": slot.is_some() })))
        })
        .await
}

/// A bound but not yet running service.
pub struct Service {
    listener: TcpListener,
    app: Router,
}

impl Service {
    pub async fn bind(config: &ServiceConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let state = AppState::open(&config.session_path)?;
        let addr = SocketAddr::new(config.bind, config.port);
        let listener = TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind { addr, source })?;
        Ok(Self { listener, app: router(state, config) })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub async fn run_until(self, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
        axum::serve(self.listener, self.app).with_graceful_shutdown(shutdown).await
    }
}

/// Binds, then serves until Ctrl-C.
pub async fn serve(config: &ServiceConfig) -> Result<(), ServiceError> {
    let service = Service::bind(config).await?;
    log::info!("listening on {}", service.local_addr()?);
    service
        .run_until(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
