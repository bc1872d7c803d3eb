//! HTTP facade over a review session.
//!
//! Reads share a lock; every mutation takes the write lock, so actions are
//! validated, logged and applied one at a time in a single total order.

use std::future::Future;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use batchfix::correction::{ClusterStatus, SessionError};
use batchfix::{Action, Scope};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::review::{ActionRequest, Review, SessionSnapshot, SubmitError};

/// Header carrying the shared token when the service is started with one.
pub const TOKEN_HEADER: &str = "x-review-token";

pub struct AppState {
    review: RwLock<Review>,
    token: Option<String>,
}

impl AppState {
    pub fn new(review: Review, token: Option<String>) -> Arc<Self> {
        Arc::new(Self {
            review: RwLock::new(review),
            token,
        })
    }

    pub fn read(&self) -> Result<RwLockReadGuard<'_, Review>, ApiError> {
        self.review.read().map_err(|_| ApiError::internal("session lock poisoned"))
    }

    fn write(&self) -> Result<RwLockWriteGuard<'_, Review>, ApiError> {
        self.review.write().map_err(|_| ApiError::internal("session lock poisoned"))
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.status, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::UnknownCluster(_) | SessionError::UnknownMember(_) => StatusCode::NOT_FOUND,
            SessionError::AlreadyResolved(_) => StatusCode::CONFLICT,
            SessionError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.to_string())
    }
}

impl From<SubmitError> for ApiError {
    fn from(e: SubmitError) -> Self {
        match e {
            SubmitError::Session(s) => s.into(),
            SubmitError::Io(io) => {
                log::error!("session log write failed: {io}");
                Self::internal(format!("session log: {io}"))
            }
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: &self.message })).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResponse {
    pub action: Action,
    pub snapshot: SessionSnapshot,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/session", get(session))
        .route("/api/clusters", get(clusters))
        .route("/api/clusters/{id}", get(cluster))
        .route("/api/clusters/{id}/action", post(cluster_action))
        .route("/api/members/{id}/action", post(member_action))
        .route("/api/suggest", get(suggest))
        .route("/api/cost", get(cost))
        .route("/api/export", get(export))
        .route("/api/images/{id}", get(image))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then persists the session.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    state.read()?.persist()
}

async fn require_token(State(state): State<Arc<AppState>>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(want) = &state.token {
        let got = headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
        if got != Some(want.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong review token").into_response();
        }
    }
    next.run(req).await
}

async fn session(State(state): State<Arc<AppState>>) -> Result<Json<SessionSnapshot>, ApiError> {
    Ok(Json(state.read()?.snapshot()))
}

#[derive(Deserialize)]
struct ClustersQuery {
    status: Option<String>,
    sort: Option<String>,
}

async fn clusters(
    State(state): State<Arc<AppState>>,
    Query(q): Query<ClustersQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let status = match q.status.as_deref() {
        None | Some("all") => None,
        Some("pending") => Some(ClusterStatus::Pending),
        Some("resolved") => Some(ClusterStatus::Resolved),
        Some(other) => return Err(ApiError::invalid(format!("unknown status {other:?}"))),
    };
    let by_id = match q.sort.as_deref() {
        None | Some("size") => false,
        Some("id") => true,
        Some(other) => return Err(ApiError::invalid(format!("unknown sort {other:?}"))),
    };
    Ok(Json(state.read()?.summaries(status, by_id)))
}

fn cluster_id(raw: &str) -> Result<usize, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("unknown cluster {raw:?}")))
}

async fn cluster(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let id = cluster_id(&id)?;
    Ok(Json(state.read()?.detail(id)?))
}

fn parse_action(scope: Scope, body: &[u8]) -> Result<Action, ApiError> {
    let req: ActionRequest =
        serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("action payload: {e}")))?;
    Ok(Action {
        kind: req.kind,
        scope,
        label: req.label,
        suggestion_rank: req.suggestion_rank,
    })
}

fn submit(state: &AppState, action: Action) -> Result<Json<ActionResponse>, ApiError> {
    let mut review = state.write()?;
    let action = review.submit(&action)?;
    Ok(Json(ActionResponse {
        action,
        snapshot: review.snapshot(),
    }))
}

async fn cluster_action(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ActionResponse>, ApiError> {
    let id = cluster_id(&id)?;
    let action = parse_action(Scope::Cluster(id), &body)?;
    submit(&state, action)
}

async fn member_action(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ActionResponse>, ApiError> {
    let action = parse_action(Scope::Member(id), &body)?;
    submit(&state, action)
}

#[derive(Deserialize)]
struct SuggestQuery {
    q: Option<String>,
    k: Option<String>,
}

async fn suggest(State(state): State<Arc<AppState>>, Query(q): Query<SuggestQuery>) -> Result<impl IntoResponse, ApiError> {
    let query = q.q.ok_or_else(|| ApiError::invalid("missing query parameter q"))?;
    let k = match q.k {
        Some(k) => Some(
            k.parse::<usize>()
                .map_err(|_| ApiError::invalid(format!("k must be a non-negative integer, got {k:?}")))?,
        ),
        None => None,
    };
    Ok(Json(state.read()?.suggest(&query, k)))
}

async fn cost(State(state): State<Arc<AppState>>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(state.read()?.cost()))
}

async fn export(State(state): State<Arc<AppState>>) -> Result<impl IntoResponse, ApiError> {
    let body = state.read()?.export();
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-ndjson"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"corrected.jsonl\""),
        ],
        body,
    ))
}

async fn image(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, format!("no image for {id:?}"));
    let path = state.read()?.image_path(&id).ok_or_else(not_found)?;
    let bytes = tokio::fs::read(&path).await.map_err(|_| not_found())?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("tif" | "tiff") => "image/tiff",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes))
}
