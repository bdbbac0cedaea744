//! HTTP service over the eventlab pipeline.
//!
//! Sessions hold an immutable panel snapshot plus the raw upload. Analysis
//! endpoints take an [`AnalysisRequest`] JSON body and answer with the same
//! artifact the CLI writes for that request. Results are cached per session
//! under a hash of the operation and request, so repeated requests return
//! byte-identical bodies. Bootstrap runs as a background job.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dashmap::DashMap;
use eventlab_core::io::{read_panel, CsvSchema};
use eventlab_core::report::ErrorBody;
use eventlab_core::{render, AnalysisRequest, Error, Operation, Panel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;
use uuid::Uuid;

const MAX_UPLOAD: usize = 64 * 1024 * 1024;

pub struct Session {
    pub data: Vec<u8>,
    pub panel: Panel,
    cache: DashMap<String, Arc<String>>,
}

enum Job {
    Running,
    Done(Arc<String>),
    Failed(StatusCode, Arc<String>),
}

#[derive(Default)]
pub struct AppState {
    sessions: DashMap<Uuid, Arc<Session>>,
    jobs: DashMap<Uuid, Job>,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    /// Register a job slot in the running state and return its id.
    pub fn register_job(&self) -> Uuid {
        let id = Uuid::new_v4();
        self.jobs.insert(id, Job::Running);
        id
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }
}

/// Router with every API route; `static_dir` optionally serves a browser bundle at `/`.
pub fn app(static_dir: Option<PathBuf>) -> Router {
    app_with_state(SharedState::default(), static_dir)
}

pub fn app_with_state(state: SharedState, static_dir: Option<PathBuf>) -> Router {
    let router = Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/sessions", post(create_session))
        .route("/sessions/:id/panel", get(get_panel))
        .route("/sessions/:id/classify", post(|s, p, h, b| analysis(Operation::Classify, s, p, h, b)))
        .route("/sessions/:id/estimate", post(|s, p, h, b| analysis(Operation::Estimate, s, p, h, b)))
        .route("/sessions/:id/twfe", post(|s, p, h, b| analysis(Operation::Twfe, s, p, h, b)))
        .route("/sessions/:id/decompose", post(|s, p, h, b| analysis(Operation::Decompose, s, p, h, b)))
        .route("/sessions/:id/diagnostics", post(|s, p, h, b| analysis(Operation::Diagnostics, s, p, h, b)))
        .route("/sessions/:id/event-study", post(|s, p, h, b| analysis(Operation::EventStudy, s, p, h, b)))
        .route("/sessions/:id/bootstrap", post(start_bootstrap))
        .route("/jobs/:id", get(get_job))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .layer(
            CorsLayer::new()
                .allow_origin(Any)
                .allow_methods(Any)
                .allow_headers(Any)
                .expose_headers([header::ETAG]),
        )
        .with_state(state);
    match static_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

/// Serve on `addr` until the process is stopped.
pub async fn serve(addr: std::net::SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app(static_dir)).await
}

fn json_response(status: StatusCode, body: Arc<String>) -> Response {
    let etag = format!("\"{}\"", hex::encode(Sha256::digest(body.as_bytes())));
    let mut res = (status, [(header::CONTENT_TYPE, "application/json")], body.as_str().to_owned()).into_response();
    if let Ok(v) = HeaderValue::from_str(&etag) {
        res.headers_mut().insert(header::ETAG, v);
    }
    res
}

fn error_response(status: StatusCode, kind: &str, message: impl Into<String>) -> Response {
    let body = ErrorBody { error: message.into(), kind: kind.into(), infeasibility: None };
    (status, Json(body)).into_response()
}

fn status_of(e: &Error) -> StatusCode {
    match e {
        Error::Infeasible(_) | Error::BootstrapFailed { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        e if e.exit_code() == 2 => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn core_error(e: &Error) -> (StatusCode, Arc<String>) {
    let body = serde_json::to_string(&ErrorBody::from_error(e)).unwrap_or_else(|_| e.to_string());
    (status_of(e), Arc::new(body))
}

fn not_found(what: &str) -> Response {
    error_response(StatusCode::NOT_FOUND, "not-found", format!("unknown {what}"))
}

fn session(state: &AppState, id: &str) -> Result<Arc<Session>, Response> {
    Uuid::parse_str(id)
        .ok()
        .and_then(|id| state.sessions.get(&id).map(|s| s.clone()))
        .ok_or_else(|| not_found("session"))
}

/// Column mapping for uploads; `covariates` is a comma list.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct UploadParams {
    unit: Option<String>,
    time: Option<String>,
    outcome: Option<String>,
    g: Option<String>,
    treat: Option<String>,
    covariates: Option<String>,
    allow_missing: bool,
}

impl UploadParams {
    fn schema(self) -> CsvSchema {
        let d = CsvSchema::default();
        CsvSchema {
            unit: self.unit.unwrap_or(d.unit),
            time: self.time.unwrap_or(d.time),
            outcome: self.outcome.unwrap_or(d.outcome),
            cohort: self.g.unwrap_or(d.cohort),
            treat: self.treat.unwrap_or(d.treat),
            covariates: self
                .covariates
                .map(|c| c.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()),
            allow_missing: self.allow_missing,
        }
    }
}

#[derive(Serialize)]
struct Created {
    id: String,
    panel: eventlab_core::report::PanelSummary,
}

async fn create_session(State(state): State<SharedState>, Query(params): Query<UploadParams>, body: Bytes) -> Response {
    let data = body.to_vec();
    let schema = params.schema();
    let parsed = tokio::task::spawn_blocking(move || read_panel(data.as_slice(), &schema).map(|p| (data, p))).await;
    let (data, panel) = match parsed {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => {
            let (status, body) = core_error(&e);
            return json_response(status, body);
        }
        Err(e) => return error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    };
    let id = Uuid::new_v4();
    let created = Created { id: id.to_string(), panel: eventlab_core::report::panel_summary(&panel) };
    state.sessions.insert(id, Arc::new(Session { data, panel, cache: DashMap::new() }));
    (StatusCode::CREATED, Json(created)).into_response()
}

fn etag_matches(headers: &HeaderMap, res: &Response) -> bool {
    match (headers.get(header::IF_NONE_MATCH), res.headers().get(header::ETAG)) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    }
}

fn with_conditional(headers: &HeaderMap, res: Response) -> Response {
    if res.status() == StatusCode::OK && etag_matches(headers, &res) {
        let etag = res.headers().get(header::ETAG).cloned();
        let mut not_modified = StatusCode::NOT_MODIFIED.into_response();
        if let Some(e) = etag {
            not_modified.headers_mut().insert(header::ETAG, e);
        }
        return not_modified;
    }
    res
}

/// Cached render of one operation for a session.
async fn run_cached(s: Arc<Session>, op: Operation, req: AnalysisRequest) -> Result<Arc<String>, (StatusCode, Arc<String>)> {
    let key = {
        let canonical = serde_json::to_string(&req).map_err(|e| core_error(&e.into()))?;
        hex::encode(Sha256::digest(format!("{}\n{canonical}", op.name()).as_bytes()))
    };
    if let Some(hit) = s.cache.get(&key) {
        return Ok(hit.clone());
    }
    let session = s.clone();
    let out = tokio::task::spawn_blocking(move || render(op, &session.data, &session.panel, &req))
        .await
        .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, Arc::new(e.to_string())))?;
    match out {
        Ok(body) => {
            // Insert-only: a concurrent identical request may have won the race; keep its body.
            let body = s.cache.entry(key).or_insert_with(|| Arc::new(body)).clone();
            Ok(body)
        }
        Err(e) => Err(core_error(&e)),
    }
}

async fn get_panel(State(state): State<SharedState>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    let s = match session(&state, &id) {
        Ok(s) => s,
        Err(r) => return r,
    };
    match run_cached(s, Operation::Panel, AnalysisRequest::default()).await {
        Ok(body) => with_conditional(&headers, json_response(StatusCode::OK, body)),
        Err((status, body)) => json_response(status, body),
    }
}

fn parse_request(body: &Bytes) -> Result<AnalysisRequest, Response> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(AnalysisRequest::default());
    }
    serde_json::from_slice(body).map_err(|e| error_response(StatusCode::BAD_REQUEST, "validation", format!("invalid request: {e}")))
}

async fn analysis(
    op: Operation,
    State(state): State<SharedState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let s = match session(&state, &id) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let req = match parse_request(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    match run_cached(s, op, req).await {
        Ok(body) => with_conditional(&headers, json_response(StatusCode::OK, body)),
        Err((status, body)) => json_response(status, body),
    }
}

#[derive(Serialize)]
struct JobStarted {
    job: String,
    status: &'static str,
}

async fn start_bootstrap(State(state): State<SharedState>, Path(id): Path<String>, body: Bytes) -> Response {
    let s = match session(&state, &id) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let req = match parse_request(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    let job = state.register_job();
    let jobs = state.clone();
    tokio::spawn(async move {
        let result = match run_cached(s, Operation::Bootstrap, req).await {
            Ok(body) => Job::Done(body),
            Err((status, body)) => Job::Failed(status, body),
        };
        jobs.jobs.insert(job, result);
    });
    (StatusCode::ACCEPTED, Json(JobStarted { job: job.to_string(), status: "running" })).into_response()
}

async fn get_job(State(state): State<SharedState>, Path(id): Path<String>) -> Response {
    let Some(job) = Uuid::parse_str(&id).ok().and_then(|id| state.jobs.get(&id)) else {
        return not_found("job");
    };
    match &*job {
        Job::Running => error_response(StatusCode::CONFLICT, "running", "job is still running"),
        Job::Done(body) => json_response(StatusCode::OK, body.clone()),
        Job::Failed(status, body) => json_response(*status, body.clone()),
    }
}
