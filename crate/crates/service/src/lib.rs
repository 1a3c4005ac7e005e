//! HTTP session service for interactive feature acquisition.
//!
//! One immutable model bundle is shared by every session. Each session sits
//! behind its own mutex, so observes on one session are serialized while
//! distinct sessions proceed independently. Model work runs on the blocking
//! pool.

pub mod views;

use std::collections::HashMap;
use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use ruledfs_core::bundle::ModelBundle;
use ruledfs_core::data::FeatureKind;
use ruledfs_core::engine::{
    select_next, write_trace_jsonl, Decision, EngineError, Expectation, HaltReason, PolicyConfig, Reference, SessionState, Status,
    ValueSource,
};

pub use views::REFERENCE;

/// A live session.
#[derive(Debug, Clone)]
pub struct SessionResource {
    pub id: String,
    pub state: SessionState,
    pub policy: PolicyConfig,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    /// Set once the trace has been written after a halt.
    pub persisted: bool,
}

type Shared = Arc<Mutex<SessionResource>>;

/// Process-wide service state.
pub struct AppState {
    bundle: Option<Arc<ModelBundle>>,
    sessions: RwLock<HashMap<String, Shared>>,
    trace_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(bundle: Option<ModelBundle>, trace_dir: Option<PathBuf>) -> Self {
        AppState {
            bundle: bundle.map(Arc::new),
            sessions: RwLock::new(HashMap::new()),
            trace_dir,
        }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().map_or(0, |s| s.len())
    }

    /// Writes the trace of every session not yet persisted; returns how many.
    pub fn flush_traces(&self) -> io::Result<usize> {
        let Some(dir) = &self.trace_dir else {
            return Ok(0);
        };
        let sessions: Vec<Shared> = self.sessions.read().map(|s| s.values().cloned().collect()).unwrap_or_default();
        let mut written = 0;
        for s in sessions {
            let Ok(mut s) = s.lock() else { continue };
            if !s.persisted {
                persist(dir, &mut s)?;
                written += 1;
            }
        }
        Ok(written)
    }

    fn bundle(&self) -> Result<Arc<ModelBundle>, ApiError> {
        self.bundle
            .clone()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model bundle is loaded"))
    }

    fn session(&self, id: &str) -> Result<Shared, ApiError> {
        self.sessions
            .read()
            .map_err(|_| ApiError::internal("session table poisoned"))?
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session '{id}'")))
    }
}

fn persist(dir: &Path, s: &mut SessionResource) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let file = std::fs::File::create(dir.join(format!("{}.jsonl", s.id)))?;
    write_trace_jsonl(&s.state, io::BufWriter::new(file))?;
    s.persisted = true;
    Ok(())
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Error body: `{"error": ..., "field": ..., "halt_reason": ...}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub field: Option<String>,
    pub halt_reason: Option<HaltReason>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), field: None, halt_reason: None }
    }

    fn field(status: StatusCode, field: &str, message: impl Into<String>) -> Self {
        ApiError { field: Some(field.into()), ..ApiError::new(status, message) }
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "error": self.message,
            "field": self.field,
            "halt_reason": self.halt_reason,
        });
        (self.status, Json(body)).into_response()
    }
}

fn engine_error(e: EngineError) -> ApiError {
    match e {
        EngineError::MissingEstimator | EngineError::InvalidPolicy(_) => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
        _ => ApiError::internal(e.to_string()),
    }
}

/// Optional session parameters; absent fields take bundle defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub bundle: Option<String>,
    pub lambda: Option<f64>,
    pub budget: Option<usize>,
    pub theta: Option<f64>,
    pub u_halt_threshold: Option<f64>,
    pub value_source: Option<ValueSource>,
    pub expectation: Option<Expectation>,
}

/// A feature given by index or by name.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum FeatureRef {
    Index(usize),
    Name(String),
}

/// A numeric value, or a level name for a categorical feature.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ValueRef {
    Number(f64),
    Level(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserveRequest {
    pub feature: FeatureRef,
    pub value: ValueRef,
}

fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

fn policy_for(bundle: &ModelBundle, req: &CreateSession) -> Result<PolicyConfig, ApiError> {
    let mut policy = PolicyConfig::for_kind(bundle.model.kind(), bundle.n_features());
    let bad = |field: &str, msg: &str| Err(ApiError::field(StatusCode::BAD_REQUEST, field, msg));
    if let Some(l) = req.lambda {
        if !(l >= 0.0 && l.is_finite()) {
            return bad("lambda", "lambda must be a finite number >= 0");
        }
        policy.lambda = l;
    }
    if let Some(b) = req.budget {
        if b < 1 {
            return bad("budget", "budget must be >= 1");
        }
        policy.budget = b;
    }
    if let Some(t) = req.theta {
        if !(0.0..1.0).contains(&t) {
            return bad("theta", "theta must lie in [0, 1)");
        }
        policy.theta = t;
    }
    if let Some(u) = req.u_halt_threshold {
        if !(u >= 0.0 && u.is_finite()) {
            return bad("u_halt_threshold", "u_halt_threshold must be a finite number >= 0");
        }
        policy.u_halt_threshold = u;
    }
    if let Some(v) = req.value_source {
        if v == ValueSource::Estimator && bundle.value_net.is_none() {
            return bad("value_source", "the loaded bundle has no trained value network");
        }
        policy.value_source = v;
    }
    if let Some(x) = req.expectation {
        policy.expectation = x;
    }
    Ok(policy)
}

/// Runs `select_next` and persists the trace when the session stops.
fn advance(bundle: &ModelBundle, dir: Option<&Path>, s: &mut SessionResource) -> Result<Decision, ApiError> {
    let decision = select_next(
        &mut s.state,
        &bundle.model,
        &bundle.conditional,
        &s.policy,
        bundle.value_net.as_ref(),
    )
    .map_err(engine_error)?;
    s.updated_at_ms = now_ms();
    if let (Decision::Stop(_), Some(dir)) = (&decision, dir) {
        if !s.persisted {
            persist(dir, s).map_err(|e| ApiError::internal(format!("cannot write trace: {e}")))?;
        }
    }
    Ok(decision)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn health(State(app): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "bundle_loaded": app.bundle.is_some(),
        "dataset": app.bundle.as_ref().map(|b| b.dataset.name.clone()),
        "sessions": app.session_count(),
    }))
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let bundle = app.bundle()?;
    let req: CreateSession = parse_body(&body)?;
    if let Some(name) = &req.bundle {
        if *name != bundle.dataset.name {
            return Err(ApiError::field(
                StatusCode::BAD_REQUEST,
                "bundle",
                format!("bundle '{name}' is not loaded; this service holds '{}'", bundle.dataset.name),
            ));
        }
    }
    let policy = policy_for(&bundle, &req)?;
    let id = uuid::Uuid::new_v4().to_string();
    let now = now_ms();
    let mut resource = SessionResource {
        id: id.clone(),
        state: SessionState::new(bundle.n_features(), policy.budget, Reference::ImputedGlobal),
        policy,
        created_at_ms: now,
        updated_at_ms: now,
        persisted: false,
    };
    let app2 = app.clone();
    let view = blocking(move || {
        let decision = advance(&bundle, app2.trace_dir.as_deref(), &mut resource)?;
        let initial_suggestion = match &decision {
            Decision::Query(s) => Some(views::suggestion(&bundle, s)),
            Decision::Stop(_) => None,
        };
        let view = views::CreatedView {
            session_id: resource.id.clone(),
            feature_names: bundle.dataset.feature_names.clone(),
            initial_suggestion,
            state: views::state(&bundle, &resource),
        };
        app2.sessions
            .write()
            .map_err(|_| ApiError::internal("session table poisoned"))?
            .insert(resource.id.clone(), Arc::new(Mutex::new(resource)));
        Ok(view)
    })
    .await?;
    tracing::info!(session = %id, "session created");
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

fn resolve_feature(bundle: &ModelBundle, f: &FeatureRef) -> Result<usize, ApiError> {
    let unknown = |what: String| ApiError::field(StatusCode::UNPROCESSABLE_ENTITY, "feature", format!("unknown feature {what}"));
    match f {
        FeatureRef::Index(i) if *i < bundle.n_features() => Ok(*i),
        FeatureRef::Index(i) => Err(unknown(i.to_string())),
        FeatureRef::Name(n) => bundle.feature_index(n).ok_or_else(|| unknown(format!("'{n}'"))),
    }
}

fn resolve_value(bundle: &ModelBundle, feature: usize, v: &ValueRef) -> Result<f64, ApiError> {
    let bad = |m: String| ApiError::field(StatusCode::UNPROCESSABLE_ENTITY, "value", m);
    let name = &bundle.dataset.feature_names[feature];
    match (&bundle.dataset.feature_kinds[feature], v) {
        (FeatureKind::Numeric, ValueRef::Number(x)) if x.is_finite() => Ok(*x),
        (FeatureKind::Numeric, ValueRef::Number(_)) => Err(bad(format!("value for '{name}' must be finite"))),
        (FeatureKind::Numeric, ValueRef::Level(t)) => t
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| bad(format!("'{t}' is not a number (feature '{name}' is numeric)"))),
        (FeatureKind::Categorical { levels }, ValueRef::Number(x)) => {
            if x.fract() == 0.0 && *x >= 0.0 && (*x as usize) < levels.len() {
                Ok(*x)
            } else {
                Err(bad(format!("'{name}' takes level codes 0..{}", levels.len())))
            }
        }
        (FeatureKind::Categorical { levels }, ValueRef::Level(t)) => levels
            .iter()
            .position(|l| l == t)
            .map(|c| c as f64)
            .ok_or_else(|| bad(format!("'{t}' is not a level of '{name}' ({})", levels.join(", ")))),
    }
}

async fn observe(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<views::ObservedView>, ApiError> {
    let bundle = app.bundle()?;
    let session = app.session(&id)?;
    let req: ObserveRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))?;
    let trace_dir = app.trace_dir.clone();
    blocking(move || {
        let mut s = session.lock().map_err(|_| ApiError::internal("session poisoned"))?;
        if s.state.status != Status::Active {
            let (_, reason, message) = views::status_parts(s.state.status);
            return Err(ApiError {
                halt_reason: reason,
                ..ApiError::new(
                    StatusCode::CONFLICT,
                    format!("session is no longer active: {}", message.unwrap_or_default()),
                )
            });
        }
        let feature = resolve_feature(&bundle, &req.feature)?;
        if s.state.observation.is_observed(feature) {
            return Err(ApiError::field(
                StatusCode::CONFLICT,
                "feature",
                format!("feature '{}' is already observed", bundle.dataset.feature_names[feature]),
            ));
        }
        let value = resolve_value(&bundle, feature, &req.value)?;
        s.state.observe(&bundle.model, feature, value).map_err(engine_error)?;
        let decision = advance(&bundle, trace_dir.as_deref(), &mut s)?;
        let (suggestion, halt_reason) = match &decision {
            Decision::Query(q) => (Some(views::suggestion(&bundle, q)), None),
            Decision::Stop(Status::Halted(r)) => (None, Some(*r)),
            Decision::Stop(_) => (None, None),
        };
        Ok(Json(views::ObservedView { state: views::state(&bundle, &s), suggestion, halt_reason }))
    })
    .await
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<views::StateView>, ApiError> {
    let bundle = app.bundle()?;
    let session = app.session(&id)?;
    blocking(move || {
        let s = session.lock().map_err(|_| ApiError::internal("session poisoned"))?;
        Ok(Json(views::state(&bundle, &s)))
    })
    .await
}

async fn explanation(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<views::ExplanationView>, ApiError> {
    let bundle = app.bundle()?;
    let session = app.session(&id)?;
    blocking(move || {
        let s = session.lock().map_err(|_| ApiError::internal("session poisoned"))?;
        Ok(Json(views::explanation(&bundle, &s)))
    })
    .await
}

async fn delete_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<StatusCode, ApiError> {
    let removed = app
        .sessions
        .write()
        .map_err(|_| ApiError::internal("session table poisoned"))?
        .remove(&id);
    match removed {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown session '{id}'"))),
    }
}

/// All JSON routes, plus an optional static directory served at `/`.
pub fn router(app: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/observe", post(observe))
        .route("/sessions/{id}/explanation", get(explanation))
        .with_state(app);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("port {port} on {host} is already in use")]
    PortInUse { host: String, port: u16 },
    #[error("cannot listen on {host}:{port}: {source}")]
    Bind { host: String, port: u16, source: io::Error },
    #[error("server failed: {0}")]
    Serve(io::Error),
}

pub async fn bind(host: &str, port: u16) -> Result<TcpListener, ServiceError> {
    TcpListener::bind((host, port)).await.map_err(|source| {
        if source.kind() == io::ErrorKind::AddrInUse {
            ServiceError::PortInUse { host: host.into(), port }
        } else {
            ServiceError::Bind { host: host.into(), port, source }
        }
    })
}

/// Serves until `shutdown` resolves, lets in-flight requests finish, then
/// writes the traces of all sessions that were not yet persisted.
pub async fn serve_on(
    listener: TcpListener,
    app: Arc<AppState>,
    static_dir: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let routes = router(app.clone(), static_dir.as_deref());
    axum::serve(listener, routes)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(ServiceError::Serve)?;
    match app.flush_traces() {
        Ok(n) if n > 0 => tracing::info!(sessions = n, "traces written on shutdown"),
        Ok(_) => {}
        Err(e) => tracing::warn!(error = %e, "could not write traces on shutdown"),
    }
    Ok(())
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
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

pub fn local_addr(listener: &TcpListener) -> Option<SocketAddr> {
    listener.local_addr().ok()
}
