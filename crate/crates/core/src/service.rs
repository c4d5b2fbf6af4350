//! HTTP service for the box editor: scene browsing, projection previews and
//! an edit job queue served by one FIFO worker.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc;

use crate::app::{job_id, EditContext, EditReport};
use crate::edit::EditSpec;
use crate::error::Error;
use crate::geometry::{
    mask_from_rects, project_box_rect, project_vertices, Box3D, Rect2D, DEFAULT_MASK_DILATION,
};
use crate::image::{flatten_rgba, rgb_png_bytes};
use crate::scene::{frame_of, render_scene, Category};

/// Environment variable holding the bind address.
pub const ADDR_ENV: &str = "BOXEDIT_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Job {
    pub id: String,
    pub status: JobStatus,
    /// Every status the job has been in, oldest first.
    pub history: Vec<JobStatus>,
    pub progress: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<EditReport>,
    /// Base64 PNG per frame once done.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<String>>,
    #[serde(skip)]
    spec: EditSpec,
}

impl Job {
    fn set(&mut self, s: JobStatus) {
        self.status = s;
        self.history.push(s);
    }
}

pub struct AppState {
    pub ctx: Arc<EditContext>,
    jobs: Mutex<HashMap<String, Job>>,
    queue: mpsc::UnboundedSender<String>,
    /// Edited frames and reports are also written under this directory.
    results: Option<PathBuf>,
}

/// JSON error body with a stable code.
struct ApiError(StatusCode, Value);

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl ToString) -> Self {
        ApiError(status, json!({"code": code, "message": message.to_string()}))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownScene(_) | Error::UnknownObject(_) | Error::UnknownBankEntry(_) => StatusCode::NOT_FOUND,
            Error::Validation { .. }
            | Error::MissingReference(_)
            | Error::MissingTargetBoxes(_)
            | Error::EmptyProjection
            | Error::NonPositiveDepth(_)
            | Error::DegenerateGeometry(_)
            | Error::Json(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({"code": e.code(), "message": e.to_string()});
        if let Error::Validation { field, .. } = &e {
            body["field"] = json!(field);
        }
        ApiError(status, body)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "JsonError", e))
}

/// Builds the router and starts the job worker on the current runtime.
pub fn router(ctx: Arc<EditContext>, results: Option<PathBuf>) -> Router {
    let (tx, rx) = mpsc::unbounded_channel();
    let state = Arc::new(AppState {
        ctx,
        jobs: Mutex::new(HashMap::new()),
        queue: tx,
        results,
    });
    tokio::spawn(worker(state.clone(), rx));
    Router::new()
        .route("/scenes", get(list_scenes))
        .route("/scenes/{id}/meta", get(scene_meta))
        .route("/scenes/{id}/frames/{i}", get(scene_frame))
        .route("/objects", get(list_objects))
        .route("/project", post(project))
        .route("/edits", post(submit_edit))
        .route("/edits/{id}", get(get_edit))
        .route("/schema", get(schema))
        .with_state(state)
}

async fn worker(state: Arc<AppState>, mut rx: mpsc::UnboundedReceiver<String>) {
    while let Some(id) = rx.recv().await {
        let spec = {
            let mut jobs = state.jobs.lock().expect("job table");
            let Some(job) = jobs.get_mut(&id) else {
                continue;
            };
            job.set(JobStatus::Running);
            job.spec.clone()
        };
        let ctx = state.ctx.clone();
        let results = state.results.clone();
        let out = tokio::task::spawn_blocking(move || {
            let out = ctx.run(&spec)?;
            if let Some(dir) = results {
                out.write(&dir.join(&out.report.job_id))?;
            }
            let frames = (0..out.video.dim(0))
                .map(|f| rgb_png_bytes(&frame_of(&out.video, f)).map(|b| base64::engine::general_purpose::STANDARD.encode(b)))
                .collect::<crate::Result<Vec<_>>>()?;
            Ok::<_, Error>((out.report, frames))
        })
        .await;
        let mut jobs = state.jobs.lock().expect("job table");
        let job = jobs.get_mut(&id).expect("queued job exists");
        match out {
            Ok(Ok((report, frames))) => {
                job.report = Some(report);
                job.frames = Some(frames);
                job.progress = 1.0;
                job.set(JobStatus::Done);
            }
            Ok(Err(e)) => {
                job.error = Some(format!("{}: {e}", e.code()));
                job.set(JobStatus::Failed);
            }
            Err(e) => {
                job.error = Some(format!("worker panicked: {e}"));
                job.set(JobStatus::Failed);
            }
        }
    }
}

async fn list_scenes(State(s): State<Arc<AppState>>) -> Json<Value> {
    let scenes: Vec<Value> = s
        .ctx
        .dataset
        .scenes
        .values()
        .map(|sc| {
            json!({
                "id": sc.id,
                "num_frames": sc.num_frames,
                "height": sc.height,
                "width": sc.width,
                "objects": sc.objects.len(),
            })
        })
        .collect();
    Json(json!(scenes))
}

async fn scene_meta(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let sc = s.ctx.dataset.scene(&id)?;
    Ok(Json(serde_json::to_value(sc).map_err(Error::from)?))
}

async fn scene_frame(State(s): State<Arc<AppState>>, Path((id, i)): Path<(String, usize)>) -> ApiResult<Response> {
    let ds = &s.ctx.dataset;
    let sc = ds.scene(&id)?;
    if i >= sc.num_frames {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "UnknownFrame", format!("scene {id} has no frame {i}")));
    }
    let path = ds.frame_path(&id, i);
    let bytes = if path.is_file() {
        std::fs::read(path).map_err(Error::from)?
    } else {
        rgb_png_bytes(&render_scene(sc).frame(i))?
    };
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
struct ObjectQuery {
    category: Option<String>,
    max_dist: Option<f64>,
}

async fn list_objects(State(s): State<Arc<AppState>>, Query(q): Query<ObjectQuery>) -> ApiResult<Json<Value>> {
    let category: Option<Category> = match &q.category {
        Some(c) => Some(
            serde_json::from_value(json!(c))
                .map_err(|_| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ValidationError", format!("unknown category `{c}`")))?,
        ),
        None => None,
    };
    let mut out = Vec::new();
    for e in s.ctx.bank.iter() {
        if category.is_some_and(|c| c != e.category) || q.max_dist.is_some_and(|d| e.distance > d) {
            continue;
        }
        let thumb = match &e.crop {
            Some(c) => base64::engine::general_purpose::STANDARD.encode(rgb_png_bytes(&flatten_rgba(c, 1.0))?),
            None => String::new(),
        };
        let mut v = serde_json::to_value(e).map_err(Error::from)?;
        v["thumbnail"] = json!(thumb);
        out.push(v);
    }
    Ok(Json(json!(out)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectRequest {
    scene_id: String,
    frame: usize,
    #[serde(rename = "box")]
    bx: Box3D,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProjectResponse {
    /// Image position of each box vertex; `null` when behind the camera.
    pub vertices: Vec<Option<[f64; 2]>>,
    pub rect: Rect2D,
    pub corners: [[f64; 2]; 4],
    /// Dilated mask bounds `[x0, y0, x1, y1]` (exclusive end) and its outline.
    pub mask_bounds: Option<[usize; 4]>,
    pub mask_outline: Vec<[f64; 2]>,
}

async fn project(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<ProjectResponse>> {
    let req: ProjectRequest = parse(&body)?;
    let sc = s.ctx.dataset.scene(&req.scene_id)?;
    if req.frame >= sc.num_frames {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "UnknownFrame", format!("no frame {}", req.frame)));
    }
    req.bx.validate()?;
    let k = &sc.intrinsics;
    let rect = project_box_rect(&req.bx, k)?;
    let mask = mask_from_rects(&[rect], k.height, k.width, DEFAULT_MASK_DILATION);
    let bounds = mask.bounds().map(|(x0, y0, x1, y1)| [x0, y0, x1, y1]);
    let outline = bounds
        .map(|[x0, y0, x1, y1]| {
            let (x0, y0, x1, y1) = (x0 as f64, y0 as f64, x1 as f64, y1 as f64);
            vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
        })
        .unwrap_or_default();
    Ok(Json(ProjectResponse {
        vertices: project_vertices(&req.bx, k),
        rect,
        corners: rect.corners(),
        mask_bounds: bounds,
        mask_outline: outline,
    }))
}

async fn submit_edit(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let spec: EditSpec = parse(&body)?;
    spec.validate()?;
    let sc = s.ctx.dataset.scene(&spec.scene_id)?;
    if let Some(oid) = spec.object_id {
        sc.object(oid)?;
    }
    if let Some(bid) = spec.reference.as_ref().and_then(|r| r.bank_id.as_ref()) {
        s.ctx.bank_entry(bid)?;
    }
    let id = job_id(&spec)?;
    let mut jobs = s.jobs.lock().expect("job table");
    if let Some(j) = jobs.get(&id) {
        return Ok((StatusCode::CONFLICT, Json(json!({"code": "DuplicateJob", "job_id": id, "status": j.status}))).into_response());
    }
    jobs.insert(
        id.clone(),
        Job {
            id: id.clone(),
            status: JobStatus::Queued,
            history: vec![JobStatus::Queued],
            progress: 0.0,
            error: None,
            report: None,
            frames: None,
            spec,
        },
    );
    s.queue
        .send(id.clone())
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "WorkerStopped", "job worker is not running"))?;
    Ok((StatusCode::ACCEPTED, Json(json!({"job_id": id, "status": JobStatus::Queued}))).into_response())
}

async fn get_edit(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Job>> {
    let jobs = s.jobs.lock().expect("job table");
    jobs.get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownJob", format!("unknown job `{id}`")))
}

/// OpenAPI-style description of the endpoints and request bodies.
pub fn schema_document() -> Value {
    let box3d = json!({
        "type": "object",
        "required": ["vertices", "yaw"],
        "properties": {
            "vertices": {"type": "array", "minItems": 8, "maxItems": 8,
                "items": {"type": "array", "minItems": 3, "maxItems": 3, "items": {"type": "number"}}},
            "yaw": {"type": "number"}
        }
    });
    json!({
        "openapi": "3.0.3",
        "info": {"title": "boxedit", "version": env!("CARGO_PKG_VERSION")},
        "paths": {
            "/scenes": {"get": {"summary": "List scenes"}},
            "/scenes/{id}/meta": {"get": {"summary": "Scene description with per-frame boxes and camera poses"}},
            "/scenes/{id}/frames/{i}": {"get": {"summary": "Frame i as PNG"}},
            "/objects": {"get": {"summary": "Object bank entries with base64 PNG thumbnails",
                "parameters": [{"name": "category", "in": "query"}, {"name": "max_dist", "in": "query"}]}},
            "/project": {"post": {"summary": "Project a camera-frame box into a scene frame",
                "requestBody": {"$ref": "#/components/schemas/ProjectRequest"}}},
            "/edits": {"post": {"summary": "Submit an edit; returns the job id (409 if already submitted)",
                "requestBody": {"$ref": "#/components/schemas/EditSpec"}}},
            "/edits/{id}": {"get": {"summary": "Job status, progress, report and frames when done"}},
            "/schema": {"get": {"summary": "This document"}}
        },
        "components": {"schemas": {
            "Box3D": box3d,
            "ProjectRequest": {
                "type": "object", "additionalProperties": false,
                "required": ["scene_id", "frame", "box"],
                "properties": {"scene_id": {"type": "string"}, "frame": {"type": "integer", "minimum": 0},
                    "box": {"$ref": "#/components/schemas/Box3D"}}
            },
            "EditSpec": {
                "type": "object", "additionalProperties": false,
                "required": ["task", "scene_id"],
                "properties": {
                    "task": {"enum": ["reposition", "insert", "delete", "replace"]},
                    "scene_id": {"type": "string"},
                    "object_id": {"type": "integer", "minimum": 0},
                    "reference": {"type": "object", "additionalProperties": false,
                        "properties": {"bank_id": {"type": "string"}, "image_path": {"type": "string"}}},
                    "target_boxes": {"type": "array", "items": {"$ref": "#/components/schemas/Box3D"}},
                    "preset": {"enum": ["forward", "backward", "lane-change-left", "lane-change-right", "static-left"]},
                    "start": {"type": "integer", "minimum": 0}
                }
            }
        }}
    })
}

async fn schema() -> Json<Value> {
    Json(schema_document())
}

/// Bind address from [`ADDR_ENV`], falling back to `fallback`.
pub fn bind_addr(fallback: &str) -> crate::Result<SocketAddr> {
    let raw = std::env::var(ADDR_ENV).unwrap_or_else(|_| fallback.to_string());
    raw.parse()
        .map_err(|_| Error::validation(ADDR_ENV, format!("not a socket address: {raw}")))
}

/// Serves until the process is stopped.
pub async fn serve(ctx: EditContext, addr: SocketAddr, results: Option<PathBuf>) -> crate::Result<()> {
    let app = router(Arc::new(ctx), results);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
