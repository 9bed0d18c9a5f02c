//! HTTP facade over the alert gate: Actors submit critical actions for a
//! gate check, reviewers work the alert queue, and anyone with a token can
//! fetch the latest metrics report.

pub mod config;
pub mod error;

use std::collections::HashMap;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use actgate_core::config::resolve_model;
use actgate_core::corpus::registry::rules_for;
use actgate_core::detectors::{build_detector, Detector, DetectorConfig, DetectorContext, DetectorKind, OracleDetector};
use actgate_core::gateway::Gateway;
use actgate_core::model::{CriticalActionRule, Trajectory};
use actgate_core::orchestrator::{
    gate_check, Alert, AlertState, AlertStore, EventLog, Feedback, FeedbackSource, GateDecision, QuotaLedger,
    SystemClock,
};
use actgate_core::prompts::PromptLibrary;

pub use config::{Role, ServiceConfig, TokenEntry};
pub use error::{ApiError, ServiceError};

/// Shared server state. Cloning is cheap.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store: Arc<AlertStore>,
    ctx: Option<DetectorContext>,
    tokens: HashMap<String, Role>,
    detector: DetectorConfig,
    reports_dir: Option<PathBuf>,
    long_poll: Duration,
    version: watch::Sender<u64>,
}

impl AppState {
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        cfg.validate()?;
        let ctx = match &cfg.backend {
            Some(spec) => {
                let prompts = match &cfg.prompts {
                    Some(dir) => PromptLibrary::with_overrides(dir)?,
                    None => PromptLibrary::builtin(),
                };
                Some(DetectorContext::new(
                    Gateway::new(spec.build()?, resolve_model(cfg.model.as_deref())),
                    Arc::new(prompts),
                ))
            }
            None => None,
        };
        let log = Arc::new(match &cfg.event_log {
            Some(p) => EventLog::with_file(p)?,
            None => EventLog::new(),
        });
        let store = Arc::new(AlertStore::with_parts(0, log, Arc::new(SystemClock), cfg.proceed_on_expiry));
        store.begin_iteration(0, cfg.capacity());
        Ok(Self::new(store, ctx, cfg))
    }

    /// Wraps an existing store, e.g. one shared with a simulation.
    pub fn new(store: Arc<AlertStore>, ctx: Option<DetectorContext>, cfg: &ServiceConfig) -> Self {
        let version = watch::Sender::new(store.log().len() as u64);
        Self {
            inner: Arc::new(Inner {
                store,
                ctx,
                tokens: cfg.tokens.iter().map(|t| (t.token.clone(), t.role)).collect(),
                detector: cfg.detector.clone(),
                reports_dir: cfg.reports_dir.clone(),
                long_poll: Duration::from_millis(cfg.long_poll_ms),
                version,
            }),
        }
    }

    pub fn store(&self) -> &Arc<AlertStore> {
        &self.inner.store
    }

    fn authorize(&self, headers: &HeaderMap, allowed: &[Role]) -> Result<Role, ApiError> {
        let token = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(ApiError::unauthorized)?;
        let role = *self.inner.tokens.get(token.trim()).ok_or_else(ApiError::unauthorized)?;
        if role == Role::Admin || allowed.contains(&role) {
            Ok(role)
        } else {
            Err(ApiError::forbidden(format!("role {role:?} may not use this endpoint")))
        }
    }

    fn version(&self) -> u64 {
        self.inner.store.log().len() as u64
    }

    fn touch(&self) {
        self.inner.version.send_replace(self.version());
    }

    fn detector(&self, cfg: &DetectorConfig, traj: &Trajectory) -> Result<Box<dyn Detector>, ApiError> {
        if cfg.kind == DetectorKind::Oracle {
            return Ok(Box::new(OracleDetector));
        }
        let ctx = self
            .inner
            .ctx
            .clone()
            .ok_or_else(|| ApiError::invalid("detector", format!("`{}` needs a backend and none is configured", cfg.kind)))?;
        build_detector(cfg, traj.task.benchmark, ctx).map_err(|e| ApiError::invalid("detector", e.to_string()))
    }
}

/// All `/v1` routes.
pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/gate/check", post(check))
        .route("/v1/alerts", get(list_alerts))
        .route("/v1/alerts/stream", get(stream_alerts))
        .route("/v1/alerts/{id}", get(get_alert))
        .route("/v1/alerts/{id}/resolve", post(resolve))
        .route("/v1/quota", get(get_quota).post(reset_quota))
        .route("/v1/reports/latest", get(latest_report))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then flushes the event log.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).await?;
    state.store().log().flush()
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { None } else { Some(path) };
        ApiError {
            field,
            ..ApiError::invalid("", e.inner().to_string())
        }
    })
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckRequest {
    trajectory: Trajectory,
    pending_action: String,
    #[serde(default)]
    detector: Option<DetectorConfig>,
    #[serde(default)]
    rules: Option<Vec<CriticalActionRule>>,
}

async fn check(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Json<GateDecision>, ApiError> {
    s.authorize(&headers, &[Role::Actor])?;
    let req: CheckRequest = parse_body(&body)?;
    req.trajectory.validate().map_err(|e| {
        let field = e.field().map_or_else(|| "trajectory".to_string(), |f| format!("trajectory.{f}"));
        ApiError::invalid(field, e.to_string())
    })?;
    if req.pending_action.trim().is_empty() {
        return Err(ApiError::invalid("pending_action", "must not be empty"));
    }
    let rules = match req.rules {
        Some(r) if r.is_empty() => return Err(ApiError::invalid("rules", "must not be empty")),
        Some(r) => r,
        None => rules_for(req.trajectory.task.benchmark),
    };
    let cfg = req.detector.unwrap_or_else(|| s.inner.detector.clone());
    cfg.validate().map_err(|e| ApiError::invalid("detector", e.to_string()))?;
    let detector = s.detector(&cfg, &req.trajectory)?;
    let store = s.inner.store.clone();
    let decision = tokio::task::spawn_blocking(move || {
        gate_check(&store, &req.trajectory, &req.pending_action, detector.as_ref(), &rules)
    })
    .await
    .map_err(|e| ApiError::internal(format!("gate check aborted: {e}")))?;
    s.touch();
    Ok(Json(decision))
}

#[derive(Deserialize)]
struct ListQuery {
    state: Option<String>,
}

fn parse_state(q: Option<&str>) -> Result<Option<AlertState>, ApiError> {
    q.map(AlertState::from_str).transpose().map_err(|e| ApiError::invalid("state", e))
}

async fn list_alerts(
    State(s): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<ListQuery>,
) -> Result<Json<Vec<Alert>>, ApiError> {
    s.authorize(&headers, &[Role::Reviewer])?;
    Ok(Json(s.inner.store.list(parse_state(q.state.as_deref())?)))
}

async fn get_alert(State(s): State<AppState>, headers: HeaderMap, UrlPath(id): UrlPath<String>) -> Result<Json<Alert>, ApiError> {
    s.authorize(&headers, &[Role::Reviewer])?;
    s.inner
        .store
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown alert `{id}`")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Verdict {
    Aligned,
    Misaligned,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResolveRequest {
    verdict: Verdict,
    #[serde(default)]
    feedback: Option<String>,
}

async fn resolve(
    State(s): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<Alert>, ApiError> {
    s.authorize(&headers, &[Role::Reviewer])?;
    let req: ResolveRequest = parse_body(&body)?;
    let misaligned = req.verdict == Verdict::Misaligned;
    let feedback = match req.feedback.filter(|f| !f.trim().is_empty()) {
        Some(_) if !misaligned => return Err(ApiError::invalid("feedback", "only misaligned verdicts carry feedback")),
        Some(text) => Some(Feedback::natural_language(text, FeedbackSource::Human)),
        None => None,
    };
    let result = s.inner.store.resolve(&id, misaligned, feedback);
    s.touch();
    Ok(Json(result?))
}

#[derive(Deserialize)]
struct StreamQuery {
    /// Version seen by the client; the call returns once the store moves
    /// past it or the wait times out.
    since: Option<u64>,
    timeout_ms: Option<u64>,
    state: Option<String>,
}

#[derive(Serialize)]
struct StreamBody {
    version: u64,
    alerts: Vec<Alert>,
    quota: QuotaLedger,
}

async fn stream_alerts(
    State(s): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<StreamQuery>,
) -> Result<Json<StreamBody>, ApiError> {
    s.authorize(&headers, &[Role::Reviewer])?;
    let filter = parse_state(q.state.as_deref().or(Some("open")))?;
    let wait = q.timeout_ms.map_or(s.inner.long_poll, Duration::from_millis).min(s.inner.long_poll);
    if let Some(since) = q.since {
        let mut rx = s.inner.version.subscribe();
        let _ = tokio::time::timeout(wait, rx.wait_for(|v| *v > since)).await;
    }
    Ok(Json(StreamBody {
        version: s.version(),
        alerts: s.inner.store.list(filter),
        quota: s.inner.store.quota(),
    }))
}

#[derive(Serialize)]
struct QuotaBody {
    iteration: u32,
    #[serde(flatten)]
    ledger: QuotaLedger,
}

async fn get_quota(State(s): State<AppState>, headers: HeaderMap) -> Result<Json<QuotaBody>, ApiError> {
    s.authorize(&headers, &[Role::Reviewer])?;
    Ok(Json(QuotaBody {
        iteration: s.inner.store.iteration(),
        ledger: s.inner.store.quota(),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QuotaReset {
    capacity: usize,
}

/// Starts a new quota period (admin only).
async fn reset_quota(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Json<QuotaBody>, ApiError> {
    s.authorize(&headers, &[])?;
    let req: QuotaReset = parse_body(&body)?;
    let store = &s.inner.store;
    store.begin_iteration(store.iteration() + 1, req.capacity);
    s.touch();
    get_quota(State(s.clone()), headers).await
}

/// Newest `*.json` file in `dir` by modification time, ties broken by name.
fn newest_report(dir: &Path) -> Option<PathBuf> {
    std::fs::read_dir(dir)
        .ok()?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .filter_map(|p| Some((p.metadata().ok()?.modified().ok()?, p)))
        .max()
        .map(|(_, p)| p)
}

async fn latest_report(State(s): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    s.authorize(&headers, &[Role::Actor, Role::Reviewer])?;
    let path = s
        .inner
        .reports_dir
        .as_deref()
        .and_then(newest_report)
        .ok_or_else(|| ApiError::not_found("no metrics report available"))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::internal(format!("reading {}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}
