//! HTTP routes. Mutations of one session are serialized through a
//! per-session lock; blocking work runs on the blocking pool.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use trackmark_core::bench::{self, BenchmarkReport, ComparisonTable};
use trackmark_core::export::{self, ExportOptions};
use trackmark_core::fixture::SquareFixture;
use trackmark_core::segmentation::{
    ObjectPromptSet, SegmenterConfig, SegmenterDescriptor,
};
use trackmark_core::session::{
    CreateOptions, LabelClass, Segment, SessionSummary, TrackOptions, TrackOutcome,
};
use trackmark_core::tracking::{TrackControl, TrackerConfig, TrackerDescriptor};
use trackmark_core::{Engines, ErrorCode, Frame, ObjectId, PixelBox, Session};

use crate::config::ServiceConfig;
use crate::error::{ApiError, ApiResult};
use crate::workflow::{self, CorrectionResult, MaskPreview, NormalizedObject};

type SessionLock = Arc<tokio::sync::Mutex<()>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
    Cancelled,
}

impl JobStatus {
    pub fn is_finished(self) -> bool {
        matches!(self, JobStatus::Succeeded | JobStatus::Failed | JobStatus::Cancelled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobInfo {
    pub job_id: String,
    pub session_id: String,
    pub seed_frame: u32,
    pub tracker: String,
    pub status: JobStatus,
    pub done: usize,
    pub total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<TrackOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

struct Job {
    info: Mutex<JobInfo>,
    ctl: TrackControl,
}

impl Job {
    fn snapshot(&self) -> JobInfo {
        let mut info = self.info.lock().expect("job lock").clone();
        if info.status == JobStatus::Running {
            (info.done, info.total) = self.ctl.progress();
        }
        info
    }

    fn update(&self, f: impl FnOnce(&mut JobInfo)) {
        f(&mut self.info.lock().expect("job lock"));
    }
}

type JobKey = (String, u32, String);

pub struct AppState {
    pub config: ServiceConfig,
    pub engines: Arc<Engines>,
    locks: Mutex<HashMap<String, SessionLock>>,
    jobs: Mutex<HashMap<String, Arc<Job>>>,
    active: Mutex<HashMap<JobKey, String>>,
}

impl AppState {
    pub fn new(config: ServiceConfig, engines: Engines) -> Self {
        AppState {
            config,
            engines: Arc::new(engines),
            locks: Mutex::default(),
            jobs: Mutex::default(),
            active: Mutex::default(),
        }
    }

    fn lock_for(&self, id: &str) -> SessionLock {
        self.locks.lock().expect("lock table").entry(id.to_string()).or_default().clone()
    }

    fn session_dir(&self, id: &str) -> ApiResult<PathBuf> {
        workflow::check_session_id(id)?;
        Ok(self.config.storage_root.join(id))
    }

    fn open(&self, id: &str) -> ApiResult<Session> {
        let dir = self.session_dir(id)?;
        Session::open(&dir).map_err(|e| match e.code() {
            ErrorCode::NotFound => ApiError::not_found(format!("no session `{id}`")),
            _ => e.into(),
        })
    }

    fn segmenter(&self, name: Option<String>) -> SegmenterConfig {
        SegmenterConfig::named(name.unwrap_or_else(|| self.config.default_backend.clone()))
    }
}

type Shared = Arc<AppState>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

/// Runs `f` on the session with the per-session lock held.
async fn mutate<T: Send + 'static>(
    state: &Shared,
    id: String,
    f: impl FnOnce(&AppState, &mut Session) -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    let lock = state.lock_for(&id);
    let _guard = lock.lock_owned().await;
    let state = state.clone();
    blocking(move || {
        let mut session = state.open(&id)?;
        f(&state, &mut session)
    })
    .await
}

pub fn router(state: AppState) -> Router {
    let limit = (state.config.max_upload_mb as usize).saturating_mul(1024 * 1024);
    Router::new()
        .route("/videos", post(upload_video))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/frames/{index}", get(get_frame))
        .route("/sessions/{id}/masks/{index}", get(get_mask))
        .route("/sessions/{id}/prompts", post(post_prompts))
        .route("/sessions/{id}/track", post(post_track))
        .route("/sessions/{id}/corrections", post(post_corrections))
        .route("/sessions/{id}/export", post(post_export))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/cancel", post(cancel_job))
        .route("/backends", get(get_backends))
        .route("/bench", post(post_bench))
        .fallback(|| async { ApiError::not_found("no such route") })
        .layer(DefaultBodyLimit::max(limit))
        .with_state(Arc::new(state))
}

fn json_body<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> ApiResult<T> {
    let bytes = if bytes.is_empty() { b"{}".as_slice() } else { bytes };
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

#[derive(Debug, Deserialize)]
struct UploadQuery {
    name: Option<String>,
    /// Comma-separated class names.
    classes: Option<String>,
    session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub fps: f64,
    pub classes: Vec<LabelClass>,
    pub object_classes: std::collections::BTreeMap<u16, u32>,
    pub segments: Vec<Segment>,
    pub summary: SessionSummary,
}

fn view(s: &Session) -> SessionView {
    let v = s.video();
    SessionView {
        session_id: s.id().to_string(),
        name: s.state().name.clone(),
        width: v.width,
        height: v.height,
        frame_count: v.frame_count,
        fps: v.fps,
        classes: s.classes().to_vec(),
        object_classes: s.state().object_classes.clone(),
        segments: s.segments().to_vec(),
        summary: s.summary(),
    }
}

/// Body: the video file (GIF). Query: `name`, `classes`, `session_id`.
async fn upload_video(
    State(state): State<Shared>,
    Query(q): Query<UploadQuery>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    if body.is_empty() {
        return Err(ApiError::new(ErrorCode::EmptyVideo, "empty upload"));
    }
    let names: Vec<String> = q
        .classes
        .as_deref()
        .unwrap_or("object")
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    if let Some(id) = &q.session_id {
        workflow::check_session_id(id).map_err(|_| ApiError::bad_request(format!("invalid session id `{id}`")))?;
    }
    let st = state.clone();
    let view = blocking(move || {
        let staging = st.config.storage_root.join(".uploads");
        std::fs::create_dir_all(&staging).map_err(|e| ApiError::new(ErrorCode::WriteError, e.to_string()))?;
        let tmp = staging.join(format!("{}.gif", uuid::Uuid::new_v4()));
        std::fs::write(&tmp, &body).map_err(|e| ApiError::new(ErrorCode::WriteError, e.to_string()))?;
        let options = CreateOptions {
            session_id: q.session_id,
            name: Some(q.name.unwrap_or_else(|| "video".into())),
        };
        let created = Session::create(&st.config.storage_root, &tmp, LabelClass::from_names(&names), options);
        let _ = std::fs::remove_file(&tmp);
        Ok(view(&created?))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    blocking(move || Ok(Json(view(&state.open(&id)?)))).await
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn get_frame(State(state): State<Shared>, Path((id, index)): Path<(String, u32)>) -> ApiResult<Response> {
    blocking(move || {
        let session = state.open(&id)?;
        let frame: Frame = session.video().frame(index)?;
        let mut out = Cursor::new(Vec::new());
        frame
            .pixels
            .write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(png_response(out.into_inner()))
    })
    .await
}

/// Tracked label image of a frame, or the seed on an untracked seed frame.
async fn get_mask(State(state): State<Shared>, Path((id, index)): Path<(String, u32)>) -> ApiResult<Response> {
    blocking(move || {
        let session = state.open(&id)?;
        if index >= session.video().frame_count {
            return Err(ApiError::new(ErrorCode::RangeError, format!("frame {index} out of range")));
        }
        let mask = match session.mask(index)? {
            Some(m) => m,
            None => session
                .seed(index)?
                .ok_or_else(|| ApiError::not_found(format!("no mask for frame {index}")))?,
        };
        Ok(png_response(mask.encode_png()?))
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptRequest {
    pub frame: u32,
    pub objects: Vec<NormalizedObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
}

async fn post_prompts(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<MaskPreview>> {
    let req: PromptRequest = json_body(&body)?;
    let preview = mutate(&state, id, move |st, session| {
        let v = session.video();
        let objects = workflow::normalize_all(&req.objects, v.width, v.height)?;
        workflow::prompt(session, &st.engines, &st.segmenter(req.backend), req.frame, &objects)
    })
    .await?;
    Ok(Json(preview))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrackRequest {
    /// Any frame of the segment; its seed frame when omitted with a single
    /// pending segment.
    #[serde(default)]
    pub frame: Option<u32>,
    #[serde(default)]
    pub tracker: Option<String>,
    #[serde(default)]
    pub stride: Option<u32>,
    #[serde(default)]
    pub max_frames: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobAccepted {
    pub job_id: String,
    /// True when an identical job was already running.
    pub existing: bool,
}

async fn post_track(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<JobAccepted>)> {
    let req: TrackRequest = json_body(&body)?;
    let st = state.clone();
    let sid = id.clone();
    let seed_frame = blocking(move || {
        let session = st.open(&sid)?;
        let seg = match req.frame {
            Some(f) => session.segment_at(f).cloned(),
            None => match session.pending_segments().as_slice() {
                [only] => Some(only.clone()),
                [] => None,
                _ => return Err(ApiError::bad_request("several pending segments; give `frame`")),
            },
        };
        seg.map(|s| s.seed_frame)
            .ok_or_else(|| ApiError::new(ErrorCode::SeedError, "no seeded segment at that frame"))
    })
    .await?;
    let tracker = TrackerConfig::named(req.tracker.unwrap_or_else(|| state.config.default_tracker.clone()));
    let max_frames = req.max_frames.unwrap_or(state.config.max_frames).min(state.config.max_frames);
    let options = TrackOptions { stride: req.stride.unwrap_or(1), max_frames };
    if options.stride == 0 || max_frames == 0 {
        return Err(ApiError::new(ErrorCode::ConfigError, "stride and max_frames must be at least 1"));
    }

    let key: JobKey = (id.clone(), seed_frame, tracker.name.clone());
    let job = {
        let mut active = state.active.lock().expect("active table");
        if let Some(existing) = active.get(&key) {
            return Ok((StatusCode::OK, Json(JobAccepted { job_id: existing.clone(), existing: true })));
        }
        let job_id = uuid::Uuid::new_v4().to_string();
        let job = Arc::new(Job {
            info: Mutex::new(JobInfo {
                job_id: job_id.clone(),
                session_id: id.clone(),
                seed_frame,
                tracker: tracker.name.clone(),
                status: JobStatus::Queued,
                done: 0,
                total: 0,
                result: None,
                error: None,
            }),
            ctl: TrackControl::new(),
        });
        active.insert(key.clone(), job_id.clone());
        state.jobs.lock().expect("job table").insert(job_id, job.clone());
        job
    };
    let job_id = job.snapshot().job_id;
    let st = state.clone();
    tokio::spawn(async move {
        let lock = st.lock_for(&key.0);
        let _guard = lock.lock_owned().await;
        job.update(|i| i.status = JobStatus::Running);
        let (st2, job2, sid) = (st.clone(), job.clone(), key.0.clone());
        let seed = key.1;
        let outcome = blocking(move || {
            job2.ctl.checkpoint()?;
            let mut session = st2.open(&sid)?;
            Ok(session.track_segment(&st2.engines, seed, &tracker, options, &job2.ctl)?)
        })
        .await;
        let (done, total) = job.ctl.progress();
        job.update(|i| {
            i.done = done;
            i.total = total;
            match outcome {
                Ok(r) => {
                    i.status = JobStatus::Succeeded;
                    i.result = Some(r);
                }
                Err(e) => {
                    i.status = if e.code == ErrorCode::Cancelled { JobStatus::Cancelled } else { JobStatus::Failed };
                    i.error = Some(e);
                }
            }
        });
        st.active.lock().expect("active table").remove(&key);
    });
    Ok((StatusCode::ACCEPTED, Json(JobAccepted { job_id, existing: false })))
}

fn find_job(state: &AppState, id: &str) -> ApiResult<Arc<Job>> {
    state
        .jobs
        .lock()
        .expect("job table")
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no job `{id}`")))
}

async fn get_job(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<JobInfo>> {
    Ok(Json(find_job(&state, &id)?.snapshot()))
}

async fn cancel_job(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<JobInfo>> {
    let job = find_job(&state, &id)?;
    if !job.snapshot().status.is_finished() {
        job.ctl.cancel();
    }
    Ok(Json(job.snapshot()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectionRequest {
    pub frame: u32,
    pub objects: Vec<NormalizedObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
}

async fn post_corrections(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<CorrectionResult>> {
    let req: CorrectionRequest = json_body(&body)?;
    let result = mutate(&state, id, move |st, session| {
        let v = session.video();
        let objects = workflow::normalize_all(&req.objects, v.width, v.height)?;
        workflow::correct(session, &st.engines, &st.segmenter(req.backend), req.frame, &objects, &TrackControl::new())
    })
    .await?;
    Ok(Json(result))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExportRequest {
    #[serde(default)]
    pub stem: Option<String>,
}

/// Responds with the zipped dataset.
async fn post_export(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: ExportRequest = json_body(&body)?;
    let (name, bytes) = mutate(&state, id, move |st, session| {
        let scratch = st.config.storage_root.join(".exports").join(uuid::Uuid::new_v4().to_string());
        let stem = req.stem.unwrap_or_else(|| session.state().name.clone());
        let dir = scratch.join(&stem);
        let result = (|| {
            export::export_yolo(session, &dir, &ExportOptions { stem: Some(stem.clone()), ..Default::default() })?;
            let archive = export::package_archive(&dir)?;
            std::fs::read(&archive).map_err(|e| ApiError::internal(e.to_string()))
        })();
        let _ = std::fs::remove_dir_all(&scratch);
        Ok((stem, result?))
    })
    .await?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/zip".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{name}.zip\"")),
        ],
        bytes,
    )
        .into_response())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendList {
    pub segmenters: Vec<SegmenterDescriptor>,
    pub trackers: Vec<TrackerDescriptor>,
    pub default_segmenter: String,
    pub default_tracker: String,
    pub max_frames: u32,
}

async fn get_backends(State(state): State<Shared>) -> Json<BackendList> {
    Json(BackendList {
        segmenters: state.engines.segmenters.descriptors(),
        trackers: state.engines.trackers.descriptors(),
        default_segmenter: state.config.default_backend.clone(),
        default_tracker: state.config.default_tracker.clone(),
        max_frames: state.config.max_frames,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRequest {
    pub backend: String,
    #[serde(default)]
    pub params: std::collections::BTreeMap<String, String>,
    #[serde(default)]
    pub weights: Option<String>,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    /// Add the published reference rows to the table.
    #[serde(default)]
    pub reference: bool,
}

fn default_repetitions() -> u32 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResponse {
    pub report: BenchmarkReport,
    pub table: ComparisonTable,
    pub text: String,
}

/// Benchmark frame and prompt: the synthetic square's first frame with a
/// box around the square.
pub fn bench_input() -> (Frame, Vec<ObjectPromptSet>) {
    let fx = SquareFixture::default();
    let (x, y) = fx.position(0);
    let (x, y) = (x as u32, y as u32);
    let b = PixelBox { x0: x, y0: y, x1: x + fx.size, y1: y + fx.size };
    let frame = Frame { index: 0, timestamp: 0.0, pixels: fx.frame(0) };
    let id = ObjectId::new(1).expect("nonzero");
    (frame, vec![ObjectPromptSet::boxes(id, vec![b])])
}

pub fn run_bench(engines: &Engines, req: &BenchRequest) -> ApiResult<BenchResponse> {
    let config = SegmenterConfig {
        name: req.backend.clone(),
        weights: req.weights.clone(),
        device: None,
        params: req.params.clone(),
    };
    let (frame, prompts) = bench_input();
    let report = bench::run_benchmark(&engines.segmenters, &config, &frame, &prompts, req.repetitions)?;
    let mut rows = if req.reference { bench::reference_rows() } else { Vec::new() };
    rows.push(report.clone());
    let table = bench::render_report(&rows)?;
    let text = table.to_text();
    Ok(BenchResponse { report, table, text })
}

async fn post_bench(State(state): State<Shared>, body: Bytes) -> ApiResult<Json<BenchResponse>> {
    let req: BenchRequest = json_body(&body)?;
    let engines = state.engines.clone();
    Ok(Json(blocking(move || run_bench(&engines, &req)).await?))
}
