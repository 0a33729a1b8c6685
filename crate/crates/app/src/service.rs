//! Session HTTP service.
//!
//! A session walks `created -> segmented -> masked -> running -> done`, or
//! lands in `failed`. Each stage endpoint is accepted only from the stage
//! before it. Artifacts live in a per-session directory; the index is in
//! memory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::convert::Infallible;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use dragforge_core::drag::{DragOptions, RegionMode};
use dragforge_core::formats::decode_grid;
use dragforge_core::mask::{DragInstruction, DragPair, Mask};
use dragforge_core::png_io::encode_preview_png;
use dragforge_core::superpixel::Segmentation;
use serde::{Deserialize, Serialize};
use tokio::sync::Notify;

use crate::config::{Config, InputName};
use crate::pipeline::{self, Artifact, Inputs};
use crate::AppError;

pub const MAX_UPLOAD: usize = 64 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Created,
    Segmented,
    Masked,
    Running,
    Done,
    Failed,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what}"))
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        match e {
            AppError::Invalid(m) => Self::invalid(m),
            AppError::Runtime(m) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, m),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Append-only drag event lines.
#[derive(Default)]
struct EventLog {
    lines: Mutex<Vec<String>>,
    closed: AtomicBool,
    notify: Notify,
}

impl EventLog {
    fn push(&self, line: String) {
        self.lines.lock().unwrap().push(line);
        self.notify.notify_waiters();
    }

    fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.notify.notify_waiters();
    }
}

struct Stages {
    status: Status,
    config: Config,
    uploads: BTreeMap<InputName, Vec<u8>>,
    inputs: Option<Arc<Inputs>>,
    seg: Option<Arc<Segmentation>>,
    mask: Option<Arc<Mask>>,
    outputs: BTreeSet<Artifact>,
    error: Option<String>,
}

struct Session {
    id: String,
    dir: PathBuf,
    stages: Mutex<Stages>,
    /// Held across a stage's computation so stage requests are serialized.
    stage_lock: tokio::sync::Mutex<()>,
    events: EventLog,
}

#[derive(Serialize)]
pub struct SessionRecord {
    pub id: String,
    pub status: Status,
    pub inputs: BTreeMap<&'static str, bool>,
    pub instruction: DragInstruction,
    pub outputs: BTreeMap<&'static str, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Session {
    fn record(&self) -> SessionRecord {
        let s = self.stages.lock().unwrap();
        SessionRecord {
            id: self.id.clone(),
            status: s.status,
            inputs: s
                .config
                .inputs()
                .into_iter()
                .map(|(n, _)| (n.as_str(), s.uploads.contains_key(&n)))
                .collect(),
            instruction: s.config.instruction.clone(),
            outputs: s
                .outputs
                .iter()
                .map(|a| (a.name(), format!("/sessions/{}/artifacts/{}", self.id, a.name())))
                .collect(),
            error: s.error.clone(),
        }
    }

    fn fail(&self, e: AppError) -> ApiError {
        let mut s = self.stages.lock().unwrap();
        s.status = Status::Failed;
        s.error = Some(e.to_string());
        e.into()
    }

    fn write(&self, artifact: Artifact, bytes: &[u8]) -> Result<(), AppError> {
        pipeline::write_artifact(&self.dir, artifact, bytes)
    }
}

pub struct AppState {
    root: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl AppState {
    pub fn new(root: impl Into<PathBuf>) -> Arc<Self> {
        Arc::new(Self {
            root: root.into(),
            sessions: RwLock::default(),
        })
    }

    fn get(&self, id: &str) -> ApiResult<Arc<Session>> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session"))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/inputs/{name}", put(put_input))
        .route("/sessions/{id}/preview/{name}", get(get_input_preview))
        .route("/sessions/{id}/segment", post(segment))
        .route("/sessions/{id}/mask", post(mask))
        .route("/sessions/{id}/drag", post(drag))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/artifacts/{name}", get(artifact))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

/// Parses an optional JSON body; an empty body yields the default.
fn optional_json<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("payload: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker: {e}")))
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::invalid("config must be UTF-8 JSON"))?;
    let config = Config::from_json(text)?;
    config.validate()?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let dir = app.root.join(&id);
    std::fs::create_dir_all(&dir)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{}: {e}", dir.display())))?;
    let session = Arc::new(Session {
        id: id.clone(),
        dir,
        stages: Mutex::new(Stages {
            status: Status::Created,
            config,
            uploads: BTreeMap::new(),
            inputs: None,
            seg: None,
            mask: None,
            outputs: BTreeSet::new(),
            error: None,
        }),
        stage_lock: tokio::sync::Mutex::new(()),
        events: EventLog::default(),
    });
    let record = session.record();
    app.sessions.write().unwrap().insert(id.clone(), session);
    log::info!("session {id} created");
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn get_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionRecord>> {
    Ok(Json(app.get(&id)?.record()))
}

async fn delete_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<StatusCode> {
    let session = app
        .sessions
        .write()
        .unwrap()
        .remove(&id)
        .ok_or_else(|| ApiError::not_found("session"))?;
    session.events.close();
    let _ = std::fs::remove_dir_all(&session.dir);
    log::info!("session {id} deleted");
    Ok(StatusCode::NO_CONTENT)
}

async fn put_input(
    State(app): State<Arc<AppState>>,
    UrlPath((id, name)): UrlPath<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<SessionRecord>> {
    let session = app.get(&id)?;
    let _stage = session.stage_lock.lock().await;
    let name = InputName::parse(&name).ok_or_else(|| ApiError::not_found("input"))?;
    let mut s = session.stages.lock().unwrap();
    if !s.config.inputs().iter().any(|(n, _)| *n == name) {
        return Err(ApiError::invalid(format!("this config takes no {} input", name.as_str())));
    }
    if s.status != Status::Created {
        return Err(ApiError::conflict("inputs are frozen once segmentation has run"));
    }
    decode_grid(&body).map_err(|e| ApiError::invalid(format!("{} input: {e}", name.as_str())))?;
    s.uploads.insert(name, body.to_vec());
    s.inputs = None;
    if s.config.inputs().iter().all(|(n, _)| s.uploads.contains_key(n)) {
        match Inputs::decode(&s.config, &s.uploads) {
            Ok(inputs) => s.inputs = Some(Arc::new(inputs)),
            Err(e) => {
                s.uploads.remove(&name);
                return Err(e.into());
            }
        }
    }
    drop(s);
    Ok(Json(session.record()))
}

async fn get_input_preview(
    State(app): State<Arc<AppState>>,
    UrlPath((id, name)): UrlPath<(String, String)>,
) -> ApiResult<Response> {
    let session = app.get(&id)?;
    let name = InputName::parse(&name).ok_or_else(|| ApiError::not_found("input"))?;
    let bytes = session
        .stages
        .lock()
        .unwrap()
        .uploads
        .get(&name)
        .cloned()
        .ok_or_else(|| ApiError::conflict(format!("{} has not been uploaded", name.as_str())))?;
    let png = blocking(move || decode_grid(&bytes).map(|g| encode_preview_png(&g))).await?
        .map_err(|e| ApiError::invalid(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRequest {
    #[serde(alias = "n_p")]
    n_patches: Option<usize>,
    compactness: Option<f64>,
    max_iters: Option<usize>,
    enforce_connectivity: Option<bool>,
}

async fn segment(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<SessionRecord>> {
    let session = app.get(&id)?;
    let req: SegmentRequest = optional_json(&body)?;
    let _stage = session.stage_lock.lock().await;
    let (config, inputs) = {
        let mut s = session.stages.lock().unwrap();
        if s.status != Status::Created {
            return Err(ApiError::conflict(format!("cannot segment a {:?} session", s.status)));
        }
        let inputs = s
            .inputs
            .clone()
            .ok_or_else(|| ApiError::conflict("upload every input before segmenting"))?;
        let mut config = s.config.clone();
        let slic = &mut config.slic;
        slic.n_patches = req.n_patches.unwrap_or(slic.n_patches);
        slic.compactness = req.compactness.unwrap_or(slic.compactness);
        slic.max_iters = req.max_iters.unwrap_or(slic.max_iters);
        slic.enforce_connectivity = req.enforce_connectivity.unwrap_or(slic.enforce_connectivity);
        config.validate()?;
        if config.slic.n_patches > inputs.latent.pixel_count() {
            return Err(ApiError::invalid("n_patches exceeds the pixel count"));
        }
        s.config = config.clone();
        (config, inputs)
    };
    let work = session.clone();
    let seg = blocking(move || -> Result<Segmentation, AppError> {
        let seg = pipeline::segment(&inputs, &config.slic)?;
        work.write(Artifact::Labels, &pipeline::labels_artifact(&seg))?;
        Ok(seg)
    })
    .await?
    .map_err(|e| session.fail(e))?;
    let mut s = session.stages.lock().unwrap();
    s.seg = Some(Arc::new(seg));
    s.outputs.insert(Artifact::Labels);
    s.status = Status::Segmented;
    drop(s);
    Ok(Json(session.record()))
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskRequest {
    pairs: Option<Vec<DragPair>>,
}

async fn mask(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<SessionRecord>> {
    let session = app.get(&id)?;
    let req: MaskRequest = optional_json(&body)?;
    let _stage = session.stage_lock.lock().await;
    let (config, seg) = {
        let mut s = session.stages.lock().unwrap();
        if s.status != Status::Segmented {
            return Err(ApiError::conflict(format!("cannot mask a {:?} session", s.status)));
        }
        let mut config = s.config.clone();
        if let Some(pairs) = req.pairs {
            config.instruction.pairs = pairs;
        }
        config.validate()?;
        let inputs = s.inputs.clone().unwrap();
        for pair in &config.instruction.pairs {
            for p in [pair.handle, pair.target] {
                inputs.latent.check_point(p).map_err(|e| ApiError::invalid(e.to_string()))?;
            }
        }
        s.config = config.clone();
        (config, s.seg.clone().unwrap())
    };
    let work = session.clone();
    let mask = blocking(move || -> Result<Mask, AppError> {
        let mask = pipeline::build_mask(&seg, &config)?;
        work.write(Artifact::Mask, &pipeline::mask_artifact(&mask))?;
        Ok(mask)
    })
    .await?
    .map_err(|e| session.fail(e))?;
    let mut s = session.stages.lock().unwrap();
    s.mask = Some(Arc::new(mask));
    s.outputs.insert(Artifact::Mask);
    s.status = Status::Masked;
    drop(s);
    Ok(Json(session.record()))
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DragRequest {
    instruction: Option<DragInstruction>,
    options: Option<DragOptions>,
    region_mode: Option<RegionMode>,
}

async fn drag(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let session = app.get(&id)?;
    let req: DragRequest = optional_json(&body)?;
    let _stage = session.stage_lock.lock().await;
    let (config, inputs, mask, seg) = {
        let mut s = session.stages.lock().unwrap();
        if s.status != Status::Masked {
            return Err(ApiError::conflict(format!("cannot drag a {:?} session", s.status)));
        }
        let mut config = s.config.clone();
        if let Some(instr) = req.instruction {
            if instr.pairs != config.instruction.pairs {
                return Err(ApiError::invalid("drag pairs differ from the masked pairs"));
            }
            config.instruction = instr;
        }
        if let Some(options) = req.options {
            config.drag = options;
        }
        if let Some(mode) = req.region_mode {
            config.drag.region_mode = mode;
        }
        config.validate()?;
        s.config = config.clone();
        s.status = Status::Running;
        (config, s.inputs.clone().unwrap(), s.mask.clone().unwrap(), s.seg.clone().unwrap())
    };
    let work = session.clone();
    tokio::task::spawn_blocking(move || {
        let result = (|| -> Result<BTreeSet<Artifact>, AppError> {
            let products = pipeline::run_drag(&config, &inputs, &seg, &mask, |e| {
                work.events.push(serde_json::to_string(e).expect("events serialize") + "\n");
            })?;
            let (_, artifacts) = pipeline::finish(&config, &inputs, &mask, &products)?;
            for (a, bytes) in &artifacts {
                work.write(*a, bytes)?;
            }
            Ok(artifacts.into_keys().collect())
        })();
        let mut s = work.stages.lock().unwrap();
        match result {
            Ok(produced) => {
                s.outputs.extend(produced);
                s.status = Status::Done;
                log::info!("session {} done", work.id);
            }
            Err(e) => {
                log::warn!("session {} failed: {e}", work.id);
                s.error = Some(e.to_string());
                s.status = Status::Failed;
            }
        }
        drop(s);
        work.events.close();
    });
    Ok((StatusCode::ACCEPTED, Json(session.record())).into_response())
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from: usize,
    #[serde(default)]
    follow: bool,
}

async fn events(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventsQuery>,
) -> ApiResult<Response> {
    let session = app.get(&id)?;
    let status = session.stages.lock().unwrap().status;
    if status < Status::Running {
        return Err(ApiError::conflict("no drag has started"));
    }
    let stream = futures::stream::unfold((session, q.from), move |(session, next)| async move {
        loop {
            let closed = session.events.closed.load(Ordering::SeqCst);
            let chunk = {
                let lines = session.events.lines.lock().unwrap();
                (next < lines.len()).then(|| (lines[next..].concat(), lines.len()))
            };
            if let Some((chunk, len)) = chunk {
                return Some((Ok::<_, Infallible>(Bytes::from(chunk)), (session, len)));
            }
            if !q.follow || closed {
                return None;
            }
            // a push between the check above and this wait is caught by the timeout
            let _ = tokio::time::timeout(Duration::from_millis(100), session.events.notify.notified()).await;
        }
    });
    Ok((
        [(header::CONTENT_TYPE, Artifact::Events.content_type())],
        Body::from_stream(stream),
    )
        .into_response())
}

async fn artifact(
    State(app): State<Arc<AppState>>,
    UrlPath((id, name)): UrlPath<(String, String)>,
) -> ApiResult<Response> {
    let session = app.get(&id)?;
    let artifact = Artifact::parse(&name).ok_or_else(|| ApiError::not_found("artifact"))?;
    if !session.stages.lock().unwrap().outputs.contains(&artifact) {
        return Err(ApiError::conflict(format!("{name} has not been produced yet")));
    }
    let path = session.dir.join(artifact.file_name());
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{name}: {e}")))?;
    Ok(([(header::CONTENT_TYPE, artifact.content_type())], bytes).into_response())
}

/// Binds and serves until ctrl-c.
pub async fn serve(addr: &str, root: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(root)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(root)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
