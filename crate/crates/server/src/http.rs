//! The `/v1` HTTP surface. Handlers are thin: they decode JSON, run the
//! blocking engine call off the async runtime and encode the result.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::engine::{ApiError, AssessRequest, ComposeRequest, Engine, ExplainRequest};
use crate::runlog::{RunKind, RunRecord};

pub const RUN_ID_HEADER: &str = "x-cream-run-id";

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

fn bad_json(rejection: JsonRejection) -> ApiError {
    ApiError::new(400, "validation_error", rejection.body_text(), json!({ "field": "body" }))
}

fn with_run_id<T: Serialize>(result: Result<T, ApiError>, record: Option<RunRecord>) -> Response {
    let mut response = match result {
        Ok(body) => Json(body).into_response(),
        Err(e) => e.into_response(),
    };
    if let Some(id) = record.and_then(|r| HeaderValue::from_str(&r.run_id).ok()) {
        response.headers_mut().insert(RUN_ID_HEADER, id);
    }
    response
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

async fn assess(State(engine): State<Arc<Engine>>, body: Result<Json<AssessRequest>, JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(r) => return bad_json(r).into_response(),
    };
    match blocking(move || engine.logged(RunKind::Assess, &req, || engine.assess(&req))).await {
        Ok((result, record)) => with_run_id(result, record),
        Err(e) => e.into_response(),
    }
}

async fn compose(State(engine): State<Arc<Engine>>, body: Result<Json<ComposeRequest>, JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(r) => return bad_json(r).into_response(),
    };
    match blocking(move || engine.logged(RunKind::Compose, &req, || engine.compose(&req))).await {
        Ok((result, record)) => with_run_id(result, record),
        Err(e) => e.into_response(),
    }
}

async fn explain(State(engine): State<Arc<Engine>>, body: Result<Json<ExplainRequest>, JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(r) => return bad_json(r).into_response(),
    };
    match blocking(move || engine.explain(&req)).await {
        Ok(result) => with_run_id(result, None),
        Err(e) => e.into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct RunsQuery {
    limit: Option<usize>,
}

async fn runs(State(engine): State<Arc<Engine>>, Query(q): Query<RunsQuery>) -> Response {
    match blocking(move || engine.list_runs(q.limit)).await.and_then(|r| r) {
        Ok(records) => Json(json!({ "runs": records })).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn health(State(engine): State<Arc<Engine>>) -> Response {
    Json(engine.health()).into_response()
}

async fn reload(State(engine): State<Arc<Engine>>) -> Response {
    match blocking(move || engine.reload_model().map(|_| engine.health())).await.and_then(|r| r) {
        Ok(h) => Json(h).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn not_found() -> ApiError {
    ApiError::new(404, "not_found", "no such endpoint", serde_json::Value::Null)
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/v1/assess", post(assess))
        .route("/v1/compose", post(compose))
        .route("/v1/explain", post(explain))
        .route("/v1/runs", get(runs))
        .route("/v1/health", get(health))
        .route("/v1/model/reload", post(reload))
        .fallback(not_found)
        .with_state(engine)
}

/// Serves until Ctrl-C.
pub async fn serve(engine: Arc<Engine>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
