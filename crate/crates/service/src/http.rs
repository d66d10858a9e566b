//! JSON-over-HTTP routes under `/api/v1`.

use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;
use uuid::Uuid;

use crate::engine::Engine;
use crate::error::ServiceError;
use crate::types::{FeedbackRecord, RawAlarm, RecommendationStatus, RetrainPolicy};

pub const TOKEN_HEADER: &str = "x-api-token";

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub token: Option<String>,
    pub default_k: usize,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::Validation(_) => StatusCode::BAD_REQUEST,
            ServiceError::NoModelLoaded => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::NoAlarmsInWindow(_) | ServiceError::UnknownRecommendation(_) => StatusCode::NOT_FOUND,
            ServiceError::AlreadyResolved(_) | ServiceError::RetrainInProgress => StatusCode::CONFLICT,
            ServiceError::MissingCorrection { .. } | ServiceError::InsufficientData { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::Store(_) | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.code(), "message": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

/// Runs blocking engine work (storage, inference) off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
        .map(Json)
}

async fn submit_alarms(
    State(s): State<AppState>,
    Path(turbine_id): Path<u32>,
    Json(events): Json<Vec<RawAlarm>>,
) -> ApiResult<crate::types::AlarmAck> {
    blocking(move || s.engine.submit_alarms(turbine_id, &events)).await
}

#[derive(Deserialize)]
struct RecommendationQuery {
    k: Option<usize>,
    at: Option<DateTime<Utc>>,
}

async fn recommendations(
    State(s): State<AppState>,
    Path(turbine_id): Path<u32>,
    Query(q): Query<RecommendationQuery>,
) -> ApiResult<Vec<crate::types::Recommendation>> {
    let k = q.k.unwrap_or(s.default_k);
    blocking(move || s.engine.get_recommendations(turbine_id, k, q.at)).await
}

#[derive(Deserialize)]
struct ListQuery {
    status: Option<RecommendationStatus>,
    limit: Option<usize>,
}

async fn list_recommendations(
    State(s): State<AppState>,
    Query(q): Query<ListQuery>,
) -> ApiResult<Vec<crate::types::Recommendation>> {
    blocking(move || s.engine.list_recommendations(q.status, q.limit.unwrap_or(100))).await
}

async fn get_recommendation(State(s): State<AppState>, Path(id): Path<Uuid>) -> ApiResult<crate::types::Recommendation> {
    blocking(move || s.engine.recommendation(id)).await
}

async fn feedback(State(s): State<AppState>, Json(fb): Json<FeedbackRecord>) -> ApiResult<crate::types::Recommendation> {
    blocking(move || s.engine.submit_feedback(&fb)).await
}

async fn retrain(State(s): State<AppState>, body: Option<Json<RetrainPolicy>>) -> Response {
    let policy = body.map(|Json(p)| p);
    match blocking(move || s.engine.trigger_retrain(policy)).await {
        Ok(ticket) => (StatusCode::ACCEPTED, ticket).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn status(State(s): State<AppState>) -> ApiResult<crate::types::ServiceStatus> {
    blocking(move || s.engine.status()).await
}

async fn require_token(State(s): State<AppState>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(expected) = &s.token {
        let given = headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(expected.as_str()) {
            return (
                StatusCode::UNAUTHORIZED,
                Json(json!({ "error": "unauthorized", "message": format!("missing or wrong {TOKEN_HEADER} header") })),
            )
                .into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState, static_dir: Option<&std::path::Path>) -> Router {
    let api = Router::new()
        .route("/turbines/{id}/alarms", post(submit_alarms))
        .route("/turbines/{id}/recommendations", get(recommendations))
        .route("/recommendations", get(list_recommendations))
        .route("/recommendations/{id}", get(get_recommendation))
        .route("/feedback", post(feedback))
        .route("/retrain", post(retrain))
        .route("/status", get(status))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    let app = Router::new().nest("/api/v1", api);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}
