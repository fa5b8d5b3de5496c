//! The wizard's HTTP API and the `serve` command.
//!
//! Model-backed operations (describe, regenerate, select, finalize) answer
//! `202 Accepted` at once and run in the background; clients poll
//! `/status`. Add `?wait=true` to block until the operation finishes.

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use npcsmith_core::llm::Gateway;
use npcsmith_core::session::{Op, SessionError, SessionService, SessionStage, SnapshotStore};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::args::ServeArgs;
use crate::{CommandResult, ExitCode, Failure};

/// An error response: `{"error": kind, "message": text}`.
#[derive(Debug)]
pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        Self(e)
    }
}

fn error_kind(e: &SessionError) -> (StatusCode, &'static str) {
    use SessionError::*;
    match e {
        NotFound(_) => (StatusCode::NOT_FOUND, "NotFound"),
        Busy(_) => (StatusCode::CONFLICT, "Busy"),
        WrongStage { .. } => (StatusCode::CONFLICT, "WrongStage"),
        WrongDirection { .. } => (StatusCode::CONFLICT, "WrongDirection"),
        PinnedSlot(_) => (StatusCode::CONFLICT, "PinnedSlot"),
        NotGenerated => (StatusCode::CONFLICT, "NotGenerated"),
        BadSlot(_) => (StatusCode::BAD_REQUEST, "BadSlot"),
        Description(_) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidDescription"),
        Edit(_) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidEdit"),
        Pipeline(p) if p.is_environmental() => (StatusCode::SERVICE_UNAVAILABLE, "ProviderUnavailable"),
        Pipeline(_) => (StatusCode::BAD_GATEWAY, "StageFailure"),
        Store(_) | Emit(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Internal"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = error_kind(&self.0);
        (status, Json(json!({"error": kind, "message": self.0.to_string()}))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

#[derive(Debug, Default, Deserialize)]
pub struct WaitParam {
    #[serde(default)]
    pub wait: bool,
}

#[derive(Debug, Deserialize)]
pub struct DescribeBody {
    pub description: String,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EditBody {
    pub field_path: String,
    pub value: String,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BackBody {
    pub target_stage: SessionStage,
}

/// The session as clients see it: the stored state without the binary
/// assets of the pack.
pub fn session_view(service: &SessionService, id: &str) -> Result<Value, SessionError> {
    let state = service.get(id)?;
    let mut value = serde_json::to_value(&state).expect("session state serializes");
    if let Some(pack) = value.pointer_mut("/finalized/pack").and_then(Value::as_object_mut) {
        pack.remove("assets");
    }
    Ok(value)
}

fn view_response(service: &SessionService, id: &str, status: StatusCode) -> ApiResult {
    Ok((status, Json(session_view(service, id)?)).into_response())
}

/// Reserves the session, then applies `op` either inline or in the
/// background.
async fn run_op(service: Arc<SessionService>, id: String, op: Op, wait: bool) -> ApiResult {
    let reservation = service.reserve(&id)?;
    let background = op.is_long() && !wait;
    let worker = service.clone();
    let task = tokio::task::spawn_blocking(move || worker.apply(reservation, op));
    if background {
        tokio::spawn(async move {
            match task.await {
                Ok(Err(e)) => log::warn!("background operation failed: {e}"),
                Err(e) => log::error!("background operation panicked: {e}"),
                Ok(Ok(_)) => {}
            }
        });
        return view_response(&service, &id, StatusCode::ACCEPTED);
    }
    match task.await {
        Ok(result) => {
            result?;
        }
        Err(e) => log::error!("operation panicked: {e}"),
    }
    view_response(&service, &id, StatusCode::OK)
}

async fn create(
    State(service): State<Arc<SessionService>>,
    Query(q): Query<WaitParam>,
    Json(body): Json<DescribeBody>,
) -> ApiResult {
    let opened = {
        let service = service.clone();
        let text = body.description.clone();
        tokio::task::spawn_blocking(move || service.open(&text))
            .await
            .expect("open does not panic")?
    };
    let reply = run_op(service.clone(), opened.id.clone(), Op::Describe(body.description), q.wait).await;
    match reply {
        Ok(mut response) => {
            if response.status() == StatusCode::OK {
                *response.status_mut() = StatusCode::CREATED;
            }
            if let Ok(location) = HeaderValue::from_str(&format!("/api/sessions/{}", opened.id)) {
                response.headers_mut().insert(header::LOCATION, location);
            }
            Ok(response)
        }
        Err(e) => {
            service.remove(&opened.id);
            Err(e)
        }
    }
}

async fn describe(
    State(service): State<Arc<SessionService>>,
    Path(id): Path<String>,
    Query(q): Query<WaitParam>,
    Json(body): Json<DescribeBody>,
) -> ApiResult {
    run_op(service, id, Op::Describe(body.description), q.wait).await
}

async fn get_session(State(service): State<Arc<SessionService>>, Path(id): Path<String>) -> ApiResult {
    view_response(&service, &id, StatusCode::OK)
}

async fn delete_session(State(service): State<Arc<SessionService>>, Path(id): Path<String>) -> ApiResult {
    if service.remove(&id) {
        Ok(StatusCode::NO_CONTENT.into_response())
    } else {
        Err(SessionError::NotFound(id).into())
    }
}

async fn status(State(service): State<Arc<SessionService>>, Path(id): Path<String>) -> ApiResult {
    Ok(Json(service.status(&id)?).into_response())
}

async fn highlight_action(
    State(service): State<Arc<SessionService>>,
    Path((id, slot, action)): Path<(String, usize, String)>,
    Query(q): Query<WaitParam>,
) -> Result<Response, Response> {
    let op = match action.as_str() {
        "pin" => Op::Pin(slot),
        "unpin" => Op::Unpin(slot),
        "regenerate" => Op::Regenerate(slot),
        "select" => Op::Select(slot),
        _ => return Err(StatusCode::NOT_FOUND.into_response()),
    };
    run_op(service, id, op, q.wait).await.map_err(IntoResponse::into_response)
}

async fn regenerate_all(
    State(service): State<Arc<SessionService>>,
    Path(id): Path<String>,
    Query(q): Query<WaitParam>,
) -> ApiResult {
    run_op(service, id, Op::RegenerateAll, q.wait).await
}

async fn edit(
    State(service): State<Arc<SessionService>>,
    Path(id): Path<String>,
    Json(body): Json<EditBody>,
) -> ApiResult {
    let op = Op::Edit {
        path: body.field_path,
        value: body.value,
    };
    run_op(service, id, op, true).await
}

async fn finalize(
    State(service): State<Arc<SessionService>>,
    Path(id): Path<String>,
    Query(q): Query<WaitParam>,
) -> ApiResult {
    run_op(service, id, Op::Finalize, q.wait).await
}

async fn back(
    State(service): State<Arc<SessionService>>,
    Path(id): Path<String>,
    Json(body): Json<BackBody>,
) -> ApiResult {
    run_op(service, id, Op::Back(body.target_stage), true).await
}

fn attachment_header(file_name: &str) -> HeaderValue {
    let safe: String = file_name
        .chars()
        .map(|c| if c.is_ascii_graphic() && c != '"' && c != '\\' || c == ' ' { c } else { '_' })
        .collect();
    HeaderValue::from_str(&format!("attachment; filename=\"{safe}\"")).expect("sanitized header value")
}

async fn download(State(service): State<Arc<SessionService>>, Path(id): Path<String>) -> ApiResult {
    let (name, bytes) = tokio::task::spawn_blocking(move || service.download(&id))
        .await
        .expect("download does not panic")?;
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("application/zip")),
            (header::CONTENT_DISPOSITION, attachment_header(&name)),
        ],
        bytes,
    )
        .into_response())
}

/// The API routes, plus static files from `ui` when given.
pub fn router(service: Arc<SessionService>, ui: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/sessions", post(create))
        .route("/api/sessions/{id}", get(get_session).delete(delete_session))
        .route("/api/sessions/{id}/status", get(status))
        .route("/api/sessions/{id}/describe", post(describe))
        .route("/api/sessions/{id}/highlights/regenerate", post(regenerate_all))
        .route("/api/sessions/{id}/highlights/{slot}/{action}", post(highlight_action))
        .route("/api/sessions/{id}/expansion", patch(edit))
        .route("/api/sessions/{id}/finalize", post(finalize))
        .route("/api/sessions/{id}/download", get(download))
        .route("/api/sessions/{id}/back", post(back))
        .with_state(service);
    match ui {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api,
    }
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        if let Err(e) = tokio::signal::ctrl_c().await {
            log::error!("cannot listen for Ctrl-C: {e}");
            std::future::pending::<()>().await;
        }
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(e) => {
                log::error!("cannot listen for SIGTERM: {e}");
                std::future::pending::<()>().await;
            }
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
}

/// Binds `listen` and serves until `shutdown` resolves.
pub async fn run_server(
    service: Arc<SessionService>,
    listen: &str,
    ui: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), Failure> {
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .map_err(|e| Failure::environment(anyhow::Error::new(e).context(format!("cannot listen on {listen}"))))?;
    let addr = listener
        .local_addr()
        .map_err(|e| Failure::environment(anyhow::Error::new(e)))?;
    println!("listening on http://{addr}");
    let sweeper = service.clone();
    let expiry = tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(600));
        loop {
            tick.tick().await;
            let s = sweeper.clone();
            let dropped = tokio::task::spawn_blocking(move || s.expire_idle()).await.unwrap_or(0);
            if dropped > 0 {
                log::info!("expired {dropped} idle sessions");
            }
        }
    });
    let result = axum::serve(listener, router(service, ui))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| Failure::environment(anyhow::Error::new(e).context("server failed")));
    expiry.abort();
    result
}

pub fn serve(args: &ServeArgs) -> CommandResult {
    let provider = args.provider.provider()?;
    let resources = Arc::new(args.resources.resources()?);
    let mut service = SessionService::new(Gateway::new(provider), resources)
        .with_ttl(Duration::from_secs(args.ttl_days.max(0) as u64 * 86_400));
    if let Some(path) = &args.snapshot {
        service = service
            .with_store(SnapshotStore::new(path))
            .map_err(|e| Failure::environment(anyhow::Error::new(e)))?;
    }
    let service = Arc::new(service);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::environment(anyhow::Error::new(e)))?;
    let result = runtime.block_on(run_server(service.clone(), &args.listen, args.ui.clone(), shutdown_signal()));
    runtime.shutdown_timeout(Duration::from_secs(30));
    if let Err(e) = service.snapshot() {
        log::error!("final snapshot failed: {e}");
    }
    result.map(|()| ExitCode::Success)
}
