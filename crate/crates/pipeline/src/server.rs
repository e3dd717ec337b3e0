//! HTTP review service over a run store.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;

use crate::error::PipelineError;
use crate::review::{ReviewAction, ReviewError, RunContext};
use crate::store::RunStore;

pub struct AppState {
    store: RunStore,
    runs: Mutex<HashMap<String, Arc<RunContext>>>,
}

impl AppState {
    pub fn new(store: RunStore) -> Self {
        Self {
            store,
            runs: Mutex::new(HashMap::new()),
        }
    }

    /// Loaded run, opened on first use and shared afterwards.
    pub fn run(&self, id: &str) -> Result<Arc<RunContext>, ApiError> {
        if let Some(ctx) = self.runs.lock().expect("poisoned").get(id) {
            return Ok(ctx.clone());
        }
        let ctx = Arc::new(RunContext::open(&self.store, id)?);
        Ok(self
            .runs
            .lock()
            .expect("poisoned")
            .entry(id.to_owned())
            .or_insert(ctx)
            .clone())
    }
}

/// Error body: `{"v":1,"error":{"kind","message"}}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let (status, kind) = match &e {
            PipelineError::UnknownRun(_) => (StatusCode::NOT_FOUND, "not_found"),
            e if e.is_validation() => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "runtime"),
        };
        Self { status, kind, message: e.to_string() }
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let (status, kind) = match &e {
            ReviewError::NotFound { .. } => (StatusCode::NOT_FOUND, "not_found"),
            ReviewError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ReviewError::InvalidPolygon(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_polygon"),
            ReviewError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            ReviewError::Pipeline(_) => {
                let ReviewError::Pipeline(p) = e else { unreachable!() };
                return p.into();
            }
        };
        Self { status, kind, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({
            "v": 1,
            "error": { "kind": self.kind, "message": self.message },
        });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn json_text(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn list_runs(State(app): State<Arc<AppState>>) -> ApiResult<Response> {
    let runs = app.store.list()?;
    Ok(Json(serde_json::json!({ "v": 1, "runs": runs })).into_response())
}

async fn get_run(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let run = app.store.load(&id)?;
    Ok(Json(serde_json::json!({ "v": 1, "run": run })).into_response())
}

#[derive(Debug, Deserialize)]
struct ThresholdQuery {
    threshold: Option<f64>,
}

async fn get_candidates(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ThresholdQuery>,
) -> ApiResult<Response> {
    let ctx = app.run(&id)?;
    let t = q.threshold.unwrap_or(ctx.record.config.postproc.threshold);
    let fc = tokio::task::spawn_blocking(move || ctx.candidates_collection(t))
        .await
        .expect("candidate task panicked")?;
    Ok(json_text(StatusCode::OK, fc.to_string()))
}

async fn get_heatmap(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let paths = app.store.existing(&id)?;
    let path = paths.heatmap();
    let bytes = std::fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ApiError {
            status: StatusCode::NOT_FOUND,
            kind: "not_found",
            message: format!("run {id} has no heatmap"),
        },
        _ => PipelineError::io(&path, e).into(),
    })?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn post_review(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: axum::body::Bytes,
) -> ApiResult<Response> {
    let ctx = app.run(&id)?;
    let action: ReviewAction = serde_json::from_slice(&body).map_err(|e| ApiError {
        status: StatusCode::UNPROCESSABLE_ENTITY,
        kind: "validation",
        message: format!("malformed review: {e}"),
    })?;
    let outcome = tokio::task::spawn_blocking(move || ctx.append(action))
        .await
        .expect("review task panicked")?;
    let status = if outcome.duplicate { StatusCode::OK } else { StatusCode::CREATED };
    Ok((status, Json(outcome)).into_response())
}

async fn get_annotations(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let ctx = app.run(&id)?;
    let fc = tokio::task::spawn_blocking(move || ctx.export_annotations())
        .await
        .expect("export task panicked")?;
    Ok(json_text(StatusCode::OK, fc.to_string()))
}

#[derive(Debug, Deserialize)]
struct MetricsQuery {
    #[serde(default)]
    adjusted: bool,
}

async fn get_metrics(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<MetricsQuery>,
) -> ApiResult<Response> {
    let ctx = app.run(&id)?;
    let body = tokio::task::spawn_blocking(move || ctx.metrics_json(q.adjusted))
        .await
        .expect("metrics task panicked")?;
    Ok(json_text(StatusCode::OK, body))
}

pub fn router(store: RunStore) -> Router {
    let state = Arc::new(AppState::new(store));
    Router::new()
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/candidates", get(get_candidates))
        .route("/runs/{id}/heatmap.png", get(get_heatmap))
        .route("/runs/{id}/reviews", axum::routing::post(post_review))
        .route("/runs/{id}/export/annotations", get(get_annotations))
        .route("/runs/{id}/metrics", get(get_metrics))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(store: RunStore, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store)).await
}
