//! HTTP JSON API.
//!
//! Every JSON body carries `schema_version`. CSV reports carry it in the
//! `x-schema-version` header instead.

use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use quaketruth_core::truth::TruthStatus;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::app::{App, RegisterPayload, ReportKind, ReviewKind};
use crate::{ServiceError, SCHEMA_VERSION};

pub const SCHEMA_HEADER: &str = "x-schema-version";

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) | ServiceError::State(_) => StatusCode::CONFLICT,
            ServiceError::Rejected(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Input(_) => StatusCode::BAD_REQUEST,
            ServiceError::Config(_) | ServiceError::Io(_) | ServiceError::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        let body = json!({
            "schema_version": SCHEMA_VERSION,
            "error": { "code": self.code(), "message": self.to_string() },
        });
        (status, Json(body)).into_response()
    }
}

/// Wraps `data` under `key` next to the schema version.
fn envelope<T: Serialize>(key: &str, data: T) -> Result<Json<Value>, ServiceError> {
    let data = serde_json::to_value(data).map_err(|e| ServiceError::Internal(e.to_string()))?;
    let mut body = serde_json::Map::new();
    body.insert("schema_version".into(), json!(SCHEMA_VERSION));
    body.insert(key.into(), data);
    Ok(Json(Value::Object(body)))
}

/// Runs blocking application code off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

#[derive(Clone)]
struct ApiState {
    app: Arc<App>,
}

pub fn router(app: Arc<App>) -> Router {
    let token = app.config().api_token.clone();
    let api = Router::new()
        .route("/events", post(register).get(list_events))
        .route("/events/{id}", get(get_event))
        .route("/events/{id}/batch", post(run_batch))
        .route("/events/{id}/claims", get(claims))
        .route("/events/{id}/truth", get(truth))
        .route("/events/{id}/projection", get(projection))
        .route("/events/{id}/reports/{kind}", get(report))
        .route("/truth/{tp_id}/review", post(review))
        .layer(middleware::from_fn(move |req, next| {
            require_token(token.clone(), req, next)
        }));
    Router::new()
        .route("/health", get(health))
        .merge(api)
        .with_state(ApiState { app })
}

async fn require_token(token: Option<String>, req: Request, next: Next) -> Response {
    if let Some(expected) = token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(expected.as_str()) {
            let body = json!({
                "schema_version": SCHEMA_VERSION,
                "error": { "code": "unauthorized", "message": "missing or invalid bearer token" },
            });
            return (StatusCode::UNAUTHORIZED, Json(body)).into_response();
        }
    }
    next.run(req).await
}

async fn health() -> Json<Value> {
    Json(json!({ "schema_version": SCHEMA_VERSION, "status": "ok" }))
}

async fn register(
    State(st): State<ApiState>,
    body: Result<Json<RegisterPayload>, axum::extract::rejection::JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ServiceError> {
    let Json(payload) = body.map_err(|e| ServiceError::Input(e.body_text()))?;
    let app = st.app.clone();
    let summary = blocking(move || app.register_event(payload)).await?;
    Ok((StatusCode::CREATED, envelope("event", summary)?))
}

async fn list_events(State(st): State<ApiState>) -> Result<Json<Value>, ServiceError> {
    envelope("events", st.app.list_events())
}

async fn get_event(State(st): State<ApiState>, Path(id): Path<String>) -> Result<Json<Value>, ServiceError> {
    envelope("event", st.app.event(&id)?)
}

async fn run_batch(State(st): State<ApiState>, Path(id): Path<String>) -> Result<Json<Value>, ServiceError> {
    let app = st.app.clone();
    envelope("batch", blocking(move || app.run_batch(&id)).await?)
}

#[derive(Debug, Deserialize)]
struct ClaimsQuery {
    round: Option<u32>,
}

async fn claims(
    State(st): State<ApiState>,
    Path(id): Path<String>,
    Query(q): Query<ClaimsQuery>,
) -> Result<Json<Value>, ServiceError> {
    envelope("claims", st.app.claims(&id, q.round)?)
}

#[derive(Debug, Deserialize)]
struct TruthQuery {
    status: Option<String>,
}

async fn truth(
    State(st): State<ApiState>,
    Path(id): Path<String>,
    Query(q): Query<TruthQuery>,
) -> Result<Json<Value>, ServiceError> {
    let status = q
        .status
        .map(|s| s.parse::<TruthStatus>().map_err(ServiceError::Input))
        .transpose()?;
    envelope("truth_points", st.app.truth(&id, status)?)
}

#[derive(Debug, Deserialize)]
struct ReviewBody {
    action: ReviewKind,
    actor: String,
}

async fn review(
    State(st): State<ApiState>,
    Path(tp_id): Path<String>,
    body: Result<Json<ReviewBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<Value>, ServiceError> {
    let Json(body) = body.map_err(|e| ServiceError::Input(e.body_text()))?;
    let app = st.app.clone();
    let view = blocking(move || app.review(&tp_id, body.action, &body.actor)).await?;
    envelope("truth_point", view)
}

async fn projection(State(st): State<ApiState>, Path(id): Path<String>) -> Result<Json<Value>, ServiceError> {
    envelope("projection", st.app.projection(&id)?)
}

async fn report(
    State(st): State<ApiState>,
    Path((id, kind)): Path<(String, String)>,
) -> Result<Response, ServiceError> {
    let kind: ReportKind = kind.parse()?;
    let body = st.app.report(&id, kind)?;
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("text/csv; charset=utf-8")),
            (
                header::HeaderName::from_static(SCHEMA_HEADER),
                HeaderValue::from(SCHEMA_VERSION),
            ),
        ],
        body,
    )
        .into_response())
}

/// Serves `app` on `listener` until `shutdown` resolves.
pub async fn serve(
    app: Arc<App>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app))
        .with_graceful_shutdown(shutdown)
        .await
}
