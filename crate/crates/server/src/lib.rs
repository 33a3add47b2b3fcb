//! HTTP front end for annotation tasks of one run.
//!
//! Routes:
//! - `GET /annotators/{id}/tasks` lists an annotator's tasks
//! - `GET /tasks/{id}` returns the task with problem, solution and
//!   explanation bodies
//! - `POST /tasks/{id}/scores` submits a score set
//! - `GET /runs/{id}/likert` returns per-question means over Done tasks
//! - `GET /runs/{id}/explanations` and `POST /runs/{id}/tasks` (admin)
//!   list explanations and create tasks
//!
//! Every request needs `Authorization: Bearer <token>`. Annotator tokens
//! only reach that annotator's tasks; the admin token reaches everything.

use std::collections::{BTreeMap, HashMap};
use std::path::Path as FsPath;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use explainbench::annotation::{
    AnnotationDesk, AnnotationError, AnnotationEvent, AnnotationTask, ApiErrorBody, Assignment, ExplanationRef,
    LikertView, ScoreSubmission, TaskDetail,
};
use explainbench::pipeline::{explanation_sources, load_run_config, PipelineError, ANNOTATIONS_FILE};
use explainbench::runstore::{read_log, Payload, RunStore, StoreError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Principal {
    Annotator(String),
    Admin,
}

impl Principal {
    fn may_act_for(&self, annotator_id: &str) -> bool {
        match self {
            Principal::Admin => true,
            Principal::Annotator(a) => a == annotator_id,
        }
    }
}

/// Bearer tokens accepted by the service.
#[derive(Debug, Clone, Default)]
pub struct Tokens {
    by_token: HashMap<String, Principal>,
}

impl Tokens {
    /// `annotators` maps annotator id to token.
    pub fn new(annotators: &BTreeMap<String, String>, admin: Option<&str>) -> Self {
        let mut by_token: HashMap<String, Principal> =
            annotators.iter().map(|(id, tok)| (tok.clone(), Principal::Annotator(id.clone()))).collect();
        if let Some(admin) = admin {
            by_token.insert(admin.to_string(), Principal::Admin);
        }
        Tokens { by_token }
    }

    fn lookup(&self, headers: &HeaderMap) -> Option<&Principal> {
        let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
        let token = value.strip_prefix("Bearer ")?.trim();
        self.by_token.get(token)
    }
}

pub struct AppState {
    pub desk: Arc<AnnotationDesk>,
    pub tokens: Tokens,
}

/// Builds the desk for a run directory: explanations from the run log,
/// tasks and scores from the annotation log next to it.
pub fn open_desk(run_dir: impl AsRef<FsPath>) -> Result<AnnotationDesk, ServerError> {
    let run_dir = run_dir.as_ref();
    let config = load_run_config(run_dir)?;
    let corpus = config.load_corpus()?;
    let log = read_log(config.log_path())?;
    let sources = explanation_sources(&corpus, &log);
    let path = run_dir.join(ANNOTATIONS_FILE);
    let (store, history) = if path.exists() {
        let (store, alog) = RunStore::open(&path)?;
        let history: Vec<AnnotationEvent> = alog
            .records
            .into_iter()
            .filter_map(|r| match r.payload {
                Payload::Annotation(e) => Some(e),
                _ => None,
            })
            .collect();
        (store, history)
    } else {
        (RunStore::create(&path, &log.header.run_id, &log.header.config_digest)?, Vec::new())
    };
    Ok(AnnotationDesk::new(log.header.run_id.clone(), sources, Some(store), history))
}

pub struct ApiError(StatusCode, ApiErrorBody);

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        ApiError(status, ApiErrorBody { error: error.into(), message: message.into(), question: None })
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let status = match &e {
            AnnotationError::UnknownTask(_) | AnnotationError::UnknownExplanation(_) => StatusCode::NOT_FOUND,
            AnnotationError::TaskDone(_) | AnnotationError::DuplicateTask { .. } => StatusCode::CONFLICT,
            AnnotationError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError(status, e.body())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_body", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn authenticate<'a>(state: &'a AppState, headers: &HeaderMap) -> Result<&'a Principal, ApiError> {
    state
        .tokens
        .lookup(headers)
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or unknown bearer token"))
}

fn forbidden() -> ApiError {
    ApiError::new(StatusCode::FORBIDDEN, "forbidden", "token does not grant access to this resource")
}

fn owned_task(state: &AppState, principal: &Principal, task_id: &str) -> Result<AnnotationTask, ApiError> {
    let task = state.desk.task(task_id).ok_or_else(|| ApiError::from(AnnotationError::UnknownTask(task_id.into())))?;
    if !principal.may_act_for(&task.annotator_id) {
        return Err(forbidden());
    }
    Ok(task)
}

fn check_run(state: &AppState, run_id: &str) -> Result<(), ApiError> {
    if run_id != state.desk.run_id() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_run", format!("this service hosts run {}", state.desk.run_id())));
    }
    Ok(())
}

async fn list_tasks(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(annotator): Path<String>,
) -> ApiResult<Vec<AnnotationTask>> {
    let principal = authenticate(&state, &headers)?;
    if !principal.may_act_for(&annotator) {
        return Err(forbidden());
    }
    Ok(Json(state.desk.tasks_for(&annotator)))
}

async fn task_detail(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(task_id): Path<String>,
) -> ApiResult<TaskDetail> {
    let principal = authenticate(&state, &headers)?;
    owned_task(&state, principal, &task_id)?;
    Ok(Json(state.desk.task_detail(&task_id)?))
}

async fn submit_scores(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(task_id): Path<String>,
    body: Result<Json<ScoreSubmission>, JsonRejection>,
) -> Result<Response, ApiError> {
    let principal = authenticate(&state, &headers)?;
    owned_task(&state, principal, &task_id)?;
    let Json(submission) = body?;
    let desk = state.desk.clone();
    let record = tokio::task::spawn_blocking(move || desk.submit_scores(&task_id, submission))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn likert(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(run_id): Path<String>,
) -> ApiResult<LikertView> {
    authenticate(&state, &headers)?;
    check_run(&state, &run_id)?;
    Ok(Json(state.desk.view()))
}

async fn explanations(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(run_id): Path<String>,
) -> ApiResult<Vec<ExplanationRef>> {
    if *authenticate(&state, &headers)? != Principal::Admin {
        return Err(forbidden());
    }
    check_run(&state, &run_id)?;
    Ok(Json(state.desk.explanations().cloned().collect()))
}

async fn create_tasks(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(run_id): Path<String>,
    body: Result<Json<Vec<Assignment>>, JsonRejection>,
) -> Result<Response, ApiError> {
    if *authenticate(&state, &headers)? != Principal::Admin {
        return Err(forbidden());
    }
    check_run(&state, &run_id)?;
    let Json(assignments) = body?;
    let desk = state.desk.clone();
    let tasks = tokio::task::spawn_blocking(move || desk.create_tasks(&assignments))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok((StatusCode::CREATED, Json(tasks)).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/annotators/{id}/tasks", get(list_tasks))
        .route("/tasks/{id}", get(task_detail))
        .route("/tasks/{id}/scores", post(submit_scores))
        .route("/runs/{id}/likert", get(likert))
        .route("/runs/{id}/explanations", get(explanations))
        .route("/runs/{id}/tasks", post(create_tasks))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), run = state.desk.run_id(), "annotation service listening");
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
