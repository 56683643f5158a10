//! HTTP facade over the resincarve pipeline: sessions for interactive prompt
//! refinement, mask download, evaluation against ground truth and G-code
//! export.
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | POST | `/sessions` | multipart `image` (PNG), optional `config` (JSON) | [`CreateResponse`] |
//! | GET | `/sessions/{id}` | | [`SessionView`] |
//! | POST | `/sessions/{id}/prompts` | `{x, y, label}` | [`PromptResponse`] |
//! | DELETE | `/sessions/{id}/prompts/{index}` | | [`PromptResponse`] |
//! | GET | `/sessions/{id}/mask.png` | | binarized mask |
//! | POST | `/sessions/{id}/gcode` | machine config + `optimize` | [`GcodeResponse`] |
//! | GET | `/sessions/{id}/evaluation?truth=path` | | `EvalReport` |
//! | POST | `/sessions/{id}/evaluation` | truth mask PNG | `EvalReport` |
//! | GET | `/healthz` | | `{"status":"ok"}` |

mod error;
mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use resincarve_core::evaluation::EvalReport;
use resincarve_core::gcode::{MachineConfig, Run};
use resincarve_core::imaging::{decode_png, load_mask, mask_from_image};
use resincarve_core::pipeline::PipelineConfig;
use resincarve_core::prompts::PromptSpec;
use resincarve_core::segmentation::ThresholdInfo;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub use error::{ApiError, ErrorBody};
pub use session::{Session, SessionHandle, SessionStore};

const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Pipeline settings used when a session is created without a `config` part.
    pub defaults: PipelineConfig,
    /// Directory of static files (the web UI) served for unmatched paths.
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct AppState {
    pub store: SessionStore,
    pub config: ServiceConfig,
}

type Shared = Arc<AppState>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalView {
    pub confidence: f64,
    pub backend_id: String,
    pub pixels: usize,
    pub seed_prompts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateResponse {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub mask_png_b64: String,
    pub proposals: Vec<ProposalView>,
    pub retained_pixels: usize,
    /// Grid prompts kept after deduplication.
    pub grid_prompts: Vec<PromptSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdInfo>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptResponse {
    pub mask_png_b64: String,
    /// Change in retained pixel count caused by this edit.
    pub delta: i64,
    pub retained_pixels: usize,
    pub proposals: Vec<ProposalView>,
    /// Operator prompts after the edit, in application order.
    pub prompts: Vec<PromptSpec>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub config: PipelineConfig,
    pub grid_prompts: Vec<PromptSpec>,
    pub prompts: Vec<PromptSpec>,
    pub proposals: Vec<ProposalView>,
    pub retained_pixels: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GcodeRequest {
    #[serde(flatten)]
    pub machine: MachineConfig,
    /// Defaults to the session's pipeline setting.
    pub optimize: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcodeResponse {
    pub gcode: String,
    pub cut_mm: f64,
    pub rapid_mm: f64,
    /// Cells removed according to the simulator replaying `gcode`.
    pub removed_cells: usize,
    /// Black pixels of the binarized mask.
    pub expected_cells: usize,
    pub verified: bool,
    /// Planned cut runs in machine millimetres, in execution order.
    pub runs: Vec<Run>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct TruthQuery {
    truth: PathBuf,
}

fn proposals(s: &Session) -> Vec<ProposalView> {
    s.state
        .result
        .proposals
        .iter()
        .map(|p| ProposalView {
            confidence: p.confidence,
            backend_id: p.backend_id.clone(),
            pixels: p.mask.count(),
            seed_prompts: p.seed_prompts.clone(),
        })
        .collect()
}

fn grid_prompts(s: &Session) -> Vec<PromptSpec> {
    s.state.prompts.kept().iter().map(|p| p.spec()).collect()
}

fn mask_b64(s: &Session) -> Result<String, ApiError> {
    Ok(BASE64.encode(s.mask_png()?))
}

fn prompt_response(s: &Session, delta: i64) -> Result<PromptResponse, ApiError> {
    Ok(PromptResponse {
        mask_png_b64: mask_b64(s)?,
        delta,
        retained_pixels: s.final_mask().count(),
        proposals: proposals(s),
        prompts: s.history.clone(),
        warnings: s.state.result.warnings.clone(),
    })
}

fn session(state: &AppState, id: &str) -> Result<SessionHandle, ApiError> {
    state.store.get(id).ok_or_else(|| ApiError::unknown_session(id))
}

fn persistence_error(e: std::io::Error) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "persistence_error", e.to_string())
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn create_session(State(state): State<Shared>, mut multipart: Multipart) -> Result<Response, ApiError> {
    let mut image = None;
    let mut config = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request("bad_multipart", e.to_string()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(|e| ApiError::bad_request("bad_multipart", e.to_string()))?;
        match name.as_str() {
            "image" => image = Some(data),
            "config" => {
                let cfg: PipelineConfig = serde_json::from_slice(&data)
                    .map_err(|e| ApiError::bad_request("invalid_config", e.to_string()))?;
                config = Some(cfg);
            }
            _ => {}
        }
    }
    let image = image.ok_or_else(|| ApiError::bad_request("missing_field", "multipart field `image` is required"))?;
    let config = config.unwrap_or_else(|| state.config.defaults.clone());

    let st = state.clone();
    let body = blocking(move || {
        let img = decode_png(&image)?;
        let session = Session::create(uuid::Uuid::new_v4().simple().to_string(), img, config)?;
        let resp = CreateResponse {
            id: session.id.clone(),
            width: session.image.width(),
            height: session.image.height(),
            mask_png_b64: mask_b64(&session)?,
            proposals: proposals(&session),
            retained_pixels: session.final_mask().count(),
            grid_prompts: grid_prompts(&session),
            threshold: session.state.result.threshold,
            warnings: session.state.result.warnings.clone(),
        };
        st.store.insert(session).map_err(persistence_error)?;
        Ok(resp)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let handle = session(&state, &id)?;
    let s = handle.lock().await;
    Ok(Json(SessionView {
        id: s.id.clone(),
        width: s.image.width(),
        height: s.image.height(),
        config: s.config.clone(),
        grid_prompts: grid_prompts(&s),
        prompts: s.history.clone(),
        proposals: proposals(&s),
        retained_pixels: s.final_mask().count(),
    }))
}

async fn add_prompt(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Json(spec): Json<PromptSpec>,
) -> Result<Json<PromptResponse>, ApiError> {
    let handle = session(&state, &id)?;
    let mut guard = handle.lock_owned().await;
    let st = state.clone();
    blocking(move || {
        let delta = guard.add_prompt(spec)?;
        st.store.persist(&guard).map_err(persistence_error)?;
        prompt_response(&guard, delta)
    })
    .await
    .map(Json)
}

async fn remove_prompt(
    State(state): State<Shared>,
    Path((id, index)): Path<(String, usize)>,
) -> Result<Json<PromptResponse>, ApiError> {
    let handle = session(&state, &id)?;
    let mut guard = handle.lock_owned().await;
    let st = state.clone();
    blocking(move || {
        let delta = guard.remove_prompt(index).ok_or_else(|| {
            ApiError::new(StatusCode::NOT_FOUND, "unknown_prompt", format!("session has no prompt {index}"))
        })??;
        st.store.persist(&guard).map_err(persistence_error)?;
        prompt_response(&guard, delta)
    })
    .await
    .map(Json)
}

async fn mask_png(State(state): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let handle = session(&state, &id)?;
    let bytes = handle.lock().await.mask_png()?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn export_gcode(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<GcodeRequest>,
) -> Result<Json<GcodeResponse>, ApiError> {
    let handle = session(&state, &id)?;
    let guard = handle.lock_owned().await;
    blocking(move || {
        let optimize = req.optimize.unwrap_or(guard.config.optimize_travel);
        let c = guard.export(&req.machine, optimize)?;
        Ok(GcodeResponse {
            cut_mm: c.simulation.cut_length_mm,
            rapid_mm: c.simulation.rapid_length_mm,
            removed_cells: c.simulation.removal.count(),
            expected_cells: c.expected_removal.count(),
            verified: c.verified,
            runs: c.toolpath.runs(),
            warnings: c.simulation.warnings.clone(),
            gcode: c.text,
        })
    })
    .await
    .map(Json)
}

async fn evaluate_path(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<TruthQuery>,
) -> Result<Json<EvalReport>, ApiError> {
    let handle = session(&state, &id)?;
    let guard = handle.lock_owned().await;
    blocking(move || Ok(guard.evaluate(&load_mask(&q.truth)?)?)).await.map(Json)
}

async fn evaluate_upload(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<EvalReport>, ApiError> {
    let handle = session(&state, &id)?;
    let guard = handle.lock_owned().await;
    blocking(move || Ok(guard.evaluate(&mask_from_image(&decode_png(&body)?))?)).await.map(Json)
}

pub fn router(state: Arc<AppState>) -> Router {
    let static_dir = state.config.static_dir.clone();
    let app = Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/prompts", post(add_prompt))
        .route("/sessions/{id}/prompts/{index}", delete(remove_prompt))
        .route("/sessions/{id}/mask.png", get(mask_png))
        .route("/sessions/{id}/gcode", post(export_gcode))
        .route("/sessions/{id}/evaluation", get(evaluate_path).post(evaluate_upload))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
