//! REST API over [`Platform`].
//!
//! Callers identify themselves with the `X-User-Id` header. Errors come back
//! as `{"error": <kind>, "message": <text>}`.

mod error;

use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub use error::ApiError;

use crate::clock::SystemClock;
use crate::config::ServerConfig;
use crate::dataset::{DatasetSelection, ExportFormat, ExportManifest, ExportOptions};
use crate::domain::QcFilter;
use crate::gateway::client::{AcceptedBody, MetricsBody, PredictionResults, PredictionsBody};
use crate::gateway::{JobOutcome, NewModel};
use crate::geometry::Polygon;
use crate::ids::{AnnotationId, FolderId, ImageId, JobId, LabelId, LeaseToken, ModelId, NodeId, UserId, WorkerId};
use crate::platform::{Platform, PlatformError};

pub const USER_HEADER: &str = "x-user-id";

type AppState = Arc<Platform>;
type ApiResult<T> = Result<T, ApiError>;

fn user(headers: &HeaderMap) -> ApiResult<UserId> {
    headers
        .get(USER_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(UserId::from)
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "MissingUser", "X-User-Id header is required"))
}

fn body<T>(r: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    r.map(|Json(v)| v)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ValidationError", e.body_text()))
}

fn query<T>(r: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    r.map(|Query(v)| v)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ValidationError", e.body_text()))
}

fn created<T: Serialize>(v: T) -> Response {
    (StatusCode::CREATED, Json(v)).into_response()
}

fn ok_or_no_content<T: Serialize>(v: Option<T>) -> Response {
    match v {
        Some(v) => Json(v).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

/// All routes. Static files are served from the data root's `folders/` and
/// `references/` directories under `/files`, and from `ui_dir` at `/`.
pub fn router(platform: Arc<Platform>) -> Router {
    let root = platform.config().data_root.clone();
    let ui = platform.config().ui_dir.clone();
    let api = Router::new()
        .route("/api/folders", get(list_folders))
        .route("/api/folders/{id}/next-image", post(next_image))
        .route("/api/leases/{token}/heartbeat", post(heartbeat))
        .route("/api/leases/{token}", axum::routing::delete(release))
        .route("/api/images/{id}/annotations", post(submit_annotation).get(image_annotations))
        .route("/api/hierarchy", get(hierarchy))
        .route("/api/hierarchy/children", get(hierarchy_children))
        .route("/api/labels/{id}/references", get(references))
        .route("/api/qc", get(qc_list))
        .route("/api/qc/{id}/accept", post(qc_accept))
        .route("/api/qc/{id}/reject", post(qc_reject))
        .route("/api/qc/{id}", axum::routing::patch(qc_edit))
        .route("/api/annotations/{id}/history", get(history))
        .route("/api/models", post(register_model).get(list_models))
        .route("/api/training/jobs", post(create_job).get(list_jobs))
        .route("/api/training/jobs/{id}", get(get_job))
        .route("/api/training/jobs/{id}/report", get(job_report))
        .route("/api/worker/jobs/next", get(worker_next))
        .route("/api/worker/jobs/{id}/dataset", get(worker_dataset))
        .route("/api/worker/jobs/{id}/metrics", post(worker_metrics))
        .route("/api/worker/jobs/{id}/predictions", post(worker_predictions))
        .route("/api/worker/jobs/{id}/complete", post(worker_complete))
        .route("/api/metrics/models/{id}", get(model_timeline))
        .route("/api/metrics/models/{id}/classes/{label}", get(class_timeline))
        .route("/api/reports/models/{id}", get(model_report))
        .route("/api/exports", post(create_export))
        .nest_service("/files/folders", ServeDir::new(root.join("folders")))
        .nest_service("/files/references", ServeDir::new(root.join("references")))
        .with_state(platform);
    match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn list_folders(State(p): State<AppState>) -> impl IntoResponse {
    Json(p.store().folders())
}

async fn next_image(State(p): State<AppState>, Path(id): Path<FolderId>, headers: HeaderMap) -> ApiResult<Response> {
    let user = user(&headers)?;
    Ok(ok_or_no_content(p.next_image(&id, &user)?))
}

async fn heartbeat(State(p): State<AppState>, Path(token): Path<LeaseToken>) -> ApiResult<Response> {
    Ok(Json(p.heartbeat(&token)?).into_response())
}

#[derive(Serialize)]
struct Released {
    released: bool,
}

async fn release(State(p): State<AppState>, Path(token): Path<LeaseToken>) -> ApiResult<Response> {
    Ok(Json(Released {
        released: p.release(&token)?,
    })
    .into_response())
}

#[derive(Debug, Deserialize)]
struct SubmitBody {
    lease_token: LeaseToken,
    polygon: Polygon,
    label_id: LabelId,
}

async fn submit_annotation(
    State(p): State<AppState>,
    Path(id): Path<ImageId>,
    headers: HeaderMap,
    req: Result<Json<SubmitBody>, JsonRejection>,
) -> ApiResult<Response> {
    let user = user(&headers)?;
    let b = body(req)?;
    Ok(created(p.submit_annotation(&id, &b.lease_token, b.polygon, b.label_id, &user)?))
}

async fn image_annotations(State(p): State<AppState>, Path(id): Path<ImageId>) -> ApiResult<Response> {
    Ok(Json(p.store().annotations_for_image(&id).map_err(PlatformError::from)?).into_response())
}

async fn hierarchy(State(p): State<AppState>) -> impl IntoResponse {
    Json(p.store().hierarchy().to_doc())
}

#[derive(Debug, Deserialize)]
struct ChildrenQuery {
    parent: Option<NodeId>,
}

async fn hierarchy_children(
    State(p): State<AppState>,
    q: Result<Query<ChildrenQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    Ok(Json(p.store().hierarchy_children(q.parent.as_ref()).map_err(PlatformError::from)?).into_response())
}

#[derive(Serialize)]
struct ReferenceView {
    label_id: LabelId,
    url: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    caption: Option<String>,
}

async fn references(State(p): State<AppState>, Path(id): Path<LabelId>) -> ApiResult<Response> {
    let refs = p.store().reference_images_for(&id).map_err(PlatformError::from)?;
    let view: Vec<ReferenceView> = refs
        .into_iter()
        .map(|r| ReferenceView {
            label_id: r.label_id,
            url: format!("/files/{}", r.file_path),
            caption: r.caption,
        })
        .collect();
    Ok(Json(view).into_response())
}

async fn qc_list(State(p): State<AppState>, q: Result<Query<QcFilter>, QueryRejection>) -> ApiResult<Response> {
    let filter = query(q)?;
    Ok(Json(p.store().qc_list(&filter)).into_response())
}

async fn qc_accept(State(p): State<AppState>, Path(id): Path<AnnotationId>, headers: HeaderMap) -> ApiResult<Response> {
    let reviewer = user(&headers)?;
    let ann = p
        .store()
        .qc_accept(&id, reviewer.as_str(), p.now())
        .map_err(PlatformError::from)?;
    Ok(Json(ann).into_response())
}

#[derive(Debug, Deserialize)]
struct RejectBody {
    #[serde(default)]
    reason: String,
}

async fn qc_reject(
    State(p): State<AppState>,
    Path(id): Path<AnnotationId>,
    headers: HeaderMap,
    req: Result<Json<RejectBody>, JsonRejection>,
) -> ApiResult<Response> {
    let reviewer = user(&headers)?;
    let b = body(req)?;
    let ann = p
        .store()
        .qc_reject(&id, reviewer.as_str(), &b.reason, p.now())
        .map_err(PlatformError::from)?;
    Ok(Json(ann).into_response())
}

#[derive(Debug, Deserialize)]
struct EditBody {
    polygon: Option<Polygon>,
    label_id: Option<LabelId>,
}

async fn qc_edit(
    State(p): State<AppState>,
    Path(id): Path<AnnotationId>,
    headers: HeaderMap,
    req: Result<Json<EditBody>, JsonRejection>,
) -> ApiResult<Response> {
    let reviewer = user(&headers)?;
    let b = body(req)?;
    let ann = p
        .store()
        .qc_edit(&id, b.polygon, b.label_id, reviewer.as_str(), p.now())
        .map_err(PlatformError::from)?;
    Ok(Json(ann).into_response())
}

async fn history(State(p): State<AppState>, Path(id): Path<AnnotationId>) -> ApiResult<Response> {
    if p.store().annotation(&id).is_none() {
        return Err(PlatformError::Domain(crate::domain::DomainError::UnknownAnnotation(id)).into());
    }
    Ok(Json(p.store().history(&id)).into_response())
}

async fn register_model(State(p): State<AppState>, req: Result<Json<NewModel>, JsonRejection>) -> ApiResult<Response> {
    let b = body(req)?;
    Ok(created(p.gateway().register_model(b, p.now()).map_err(PlatformError::from)?))
}

async fn list_models(State(p): State<AppState>) -> impl IntoResponse {
    Json(p.gateway().models())
}

#[derive(Debug, Deserialize)]
struct JobRequest {
    model_id: ModelId,
    selection: DatasetSelection,
    ratio: Option<f64>,
    seed: Option<u64>,
}

async fn create_job(State(p): State<AppState>, req: Result<Json<JobRequest>, JsonRejection>) -> ApiResult<Response> {
    let b = body(req)?;
    Ok(created(p.create_training_job(&b.model_id, b.selection, b.ratio, b.seed)?))
}

async fn list_jobs(State(p): State<AppState>) -> impl IntoResponse {
    Json(p.gateway().jobs())
}

async fn get_job(State(p): State<AppState>, Path(id): Path<JobId>) -> ApiResult<Response> {
    Ok(Json(p.gateway().job(&id).map_err(PlatformError::from)?).into_response())
}

async fn job_report(State(p): State<AppState>, Path(id): Path<JobId>) -> ApiResult<Response> {
    Ok(Json(p.job_report(&id)?).into_response())
}

#[derive(Debug, Deserialize)]
struct WorkerQuery {
    worker_id: WorkerId,
}

async fn worker_next(State(p): State<AppState>, q: Result<Query<WorkerQuery>, QueryRejection>) -> ApiResult<Response> {
    let q = query(q)?;
    let job = p
        .gateway()
        .claim_next_job(&q.worker_id, p.now())
        .map_err(PlatformError::from)?;
    Ok(ok_or_no_content(job))
}

async fn worker_dataset(State(p): State<AppState>, Path(id): Path<JobId>) -> ApiResult<Response> {
    Ok(Json(p.job_dataset(&id)?).into_response())
}

async fn worker_metrics(
    State(p): State<AppState>,
    Path(id): Path<JobId>,
    req: Result<Json<MetricsBody>, JsonRejection>,
) -> ApiResult<Response> {
    let b = body(req)?;
    let accepted = p
        .gateway()
        .post_metrics(p.store(), &id, b.records, p.now())
        .map_err(PlatformError::from)?;
    Ok(Json(AcceptedBody { accepted }).into_response())
}

async fn worker_predictions(
    State(p): State<AppState>,
    Path(id): Path<JobId>,
    req: Result<Json<PredictionsBody>, JsonRejection>,
) -> ApiResult<Response> {
    let b = body(req)?;
    let results = p
        .gateway()
        .post_predictions(p.store(), p.scheduler(), &id, b.predictions, p.now())
        .map_err(PlatformError::from)?;
    Ok(Json(PredictionResults { results }).into_response())
}

async fn worker_complete(
    State(p): State<AppState>,
    Path(id): Path<JobId>,
    req: Result<Json<JobOutcome>, JsonRejection>,
) -> ApiResult<Response> {
    let b = body(req)?;
    Ok(Json(p.gateway().complete_job(&id, b, p.now()).map_err(PlatformError::from)?).into_response())
}

async fn model_timeline(State(p): State<AppState>, Path(id): Path<ModelId>) -> ApiResult<Response> {
    Ok(Json(p.gateway().metrics().model_timeline(&id).map_err(PlatformError::from)?).into_response())
}

async fn class_timeline(State(p): State<AppState>, Path((id, label)): Path<(ModelId, LabelId)>) -> ApiResult<Response> {
    Ok(Json(
        p.gateway()
            .metrics()
            .class_timeline(&id, &label)
            .map_err(PlatformError::from)?,
    )
    .into_response())
}

async fn model_report(State(p): State<AppState>, Path(id): Path<ModelId>) -> ApiResult<Response> {
    Ok(Json(p.model_report(&id)?).into_response())
}

#[derive(Debug, Deserialize)]
struct ExportRequest {
    format: String,
    selection: DatasetSelection,
    ratio: Option<f64>,
    seed: Option<u64>,
    #[serde(default)]
    copy_images: bool,
}

#[derive(Debug, Serialize)]
struct ExportResponse {
    manifest: ExportManifest,
    /// Relative to the data root when inside it.
    path: PathBuf,
}

async fn create_export(State(p): State<AppState>, req: Result<Json<ExportRequest>, JsonRejection>) -> ApiResult<Response> {
    let b = body(req)?;
    let format: ExportFormat = b.format.parse().map_err(PlatformError::from)?;
    let (manifest, path) = p.export(
        &b.selection,
        format,
        b.ratio,
        b.seed,
        None,
        ExportOptions {
            copy_images: b.copy_images,
        },
    )?;
    let path = path
        .strip_prefix(&p.config().data_root)
        .map(FsPath::to_path_buf)
        .unwrap_or(path);
    Ok(created(ExportResponse { manifest, path }))
}

/// Boot the platform and serve until Ctrl-C or SIGTERM.
pub async fn serve(config: ServerConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let platform = Arc::new(Platform::open(config, Arc::new(SystemClock))?);
    let listen = platform.config().listen.clone();
    let listener = tokio::net::TcpListener::bind(&listen).await?;
    tracing::info!(addr = %listener.local_addr()?, folders = platform.store().folders().len(), "listening");

    let sweeper = {
        let p = Arc::clone(&platform);
        let every = Duration::from_secs(p.config().sweep_interval_secs);
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            loop {
                tick.tick().await;
                match p.sweep() {
                    Ok(0) => {}
                    Ok(n) => tracing::info!(expired = n, "lease sweep"),
                    Err(e) => tracing::warn!(error = %e, "lease sweep failed"),
                }
            }
        })
    };
    axum::serve(listener, router(platform)).with_graceful_shutdown(shutdown()).await?;
    sweeper.abort();
    tracing::info!("stopped");
    Ok(())
}

async fn shutdown() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
