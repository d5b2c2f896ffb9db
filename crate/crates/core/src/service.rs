//! HTTP inference service over a shared, read-only [`Pipeline`].

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::CheckpointDir;
use crate::error::{FastError, Result};
use crate::pipeline::{decode_mask, decode_rgb, encode_gray_png, encode_prob_png, encode_rgb_png, EditOptions, EditRequest, Pipeline};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EditBody {
    pub image_b64_png: String,
    pub target_text: String,
    #[serde(default)]
    pub mask_b64_png: Option<String>,
    /// Overrides the service default for thresholding the stage-I mask.
    #[serde(default)]
    pub binarize_mask: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EditReply {
    pub edited_b64_png: String,
    pub estimated_mask_b64_png: String,
    pub timing_ms: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaskBody {
    pub image_b64_png: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaskReply {
    /// Soft probabilities as 8-bit gray.
    pub soft_mask_b64_png: String,
    /// Probabilities thresholded at 0.5.
    pub mask_b64_png: String,
    pub timing_ms: f64,
}

/// A loaded model and the hash of the checkpoint it came from.
pub struct LoadedModel {
    pub pipeline: Pipeline,
    pub checkpoint_hash: String,
    pub checkpoint: Option<PathBuf>,
}

/// Shared service state; the model slot is filled exactly once.
#[derive(Clone, Default)]
pub struct AppState {
    model: Arc<OnceLock<LoadedModel>>,
    ui_dir: Option<PathBuf>,
}

impl AppState {
    /// A state whose model is not loaded yet.
    pub fn loading() -> Self {
        Self::default()
    }

    pub fn ready(model: LoadedModel) -> Self {
        let s = Self::default();
        s.install(model);
        s
    }

    pub fn with_ui_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.ui_dir = dir;
        self
    }

    /// Installs the model; later calls are ignored.
    pub fn install(&self, model: LoadedModel) -> bool {
        self.model.set(model).is_ok()
    }

    pub fn model(&self) -> Option<&LoadedModel> {
        self.model.get()
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1, "status": self.0.as_u16() }))).into_response()
    }
}

impl From<FastError> for ApiError {
    fn from(e: FastError) -> Self {
        let code = match &e {
            FastError::GlyphOverflow(_) | FastError::InvalidText(_) => StatusCode::UNPROCESSABLE_ENTITY,
            FastError::MissingCheckpoint(_) | FastError::BackboneUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            FastError::Image(_) | FastError::ShapeMismatch(_) | FastError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let msg = match &e {
            FastError::GlyphOverflow(_) => format!("text unrenderable: {e}"),
            _ => e.to_string(),
        };
        ApiError(code, msg)
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| bad_request(format!("malformed JSON: {e}")))
}

fn b64(field: &str, s: &str) -> std::result::Result<Vec<u8>, ApiError> {
    B64.decode(s.trim()).map_err(|e| bad_request(format!("{field}: invalid base64: {e}")))
}

fn model(state: &AppState) -> std::result::Result<&LoadedModel, ApiError> {
    state.model().ok_or_else(|| ApiError(StatusCode::SERVICE_UNAVAILABLE, "model weights are still loading".into()))
}

fn decode_image(field: &str, s: &str) -> std::result::Result<crate::image::TensorImage, ApiError> {
    decode_rgb(&b64(field, s)?).map_err(|e| bad_request(format!("{field}: {e}")))
}

async fn healthz(State(state): State<AppState>) -> Response {
    match state.model() {
        Some(m) => Json(json!({
            "status": "ok",
            "version": VERSION,
            "checkpoint_hash": m.checkpoint_hash,
            "checkpoint": m.checkpoint,
            "unet": m.pipeline.has_unet(),
            "binarize_mask": m.pipeline.options().binarize_mask,
        }))
        .into_response(),
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading", "version": VERSION }))).into_response(),
    }
}

async fn edit(State(state): State<AppState>, body: Bytes) -> std::result::Result<Json<EditReply>, ApiError> {
    let started = Instant::now();
    let req: EditBody = parse(&body)?;
    model(&state)?;
    let image = decode_image("image_b64_png", &req.image_b64_png)?;
    let mask = match &req.mask_b64_png {
        Some(m) => Some(decode_mask(&b64("mask_b64_png", m)?).map_err(|e| bad_request(format!("mask_b64_png: {e}")))?),
        None => None,
    };
    let st = state.clone();
    let out = tokio::task::spawn_blocking(move || -> Result<(Vec<u8>, Vec<u8>)> {
        let m = st.model().expect("checked above");
        let options = EditOptions { binarize_mask: req.binarize_mask.unwrap_or(m.pipeline.options().binarize_mask) };
        let r = EditRequest { image, target_text: req.target_text, source_mask: mask };
        let out = m.pipeline.edit_with(&r, options)?;
        Ok((encode_rgb_png(&out.edited)?, encode_gray_png(&out.source_mask)?))
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(EditReply {
        edited_b64_png: B64.encode(out.0),
        estimated_mask_b64_png: B64.encode(out.1),
        timing_ms: started.elapsed().as_secs_f64() * 1e3,
    }))
}

async fn mask(State(state): State<AppState>, body: Bytes) -> std::result::Result<Json<MaskReply>, ApiError> {
    let started = Instant::now();
    let req: MaskBody = parse(&body)?;
    model(&state)?;
    let image = decode_image("image_b64_png", &req.image_b64_png)?;
    let st = state.clone();
    let (soft, hard) = tokio::task::spawn_blocking(move || -> Result<(Vec<u8>, Vec<u8>)> {
        let soft = st.model().expect("checked above").pipeline.estimate_mask(&image)?;
        let hard = crate::image::TensorImage::new(soft.tensor().map(|p| if p > 0.5 { 1.0 } else { 0.0 }))?;
        Ok((encode_prob_png(&soft)?, encode_prob_png(&hard)?))
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(MaskReply {
        soft_mask_b64_png: B64.encode(soft),
        mask_b64_png: B64.encode(hard),
        timing_ms: started.elapsed().as_secs_f64() * 1e3,
    }))
}

/// Routes: `GET /healthz`, `POST /edit`, `POST /mask`, and static `/ui` when a
/// UI directory is configured.
pub fn router(state: AppState) -> Router {
    let ui = state.ui_dir.clone();
    let mut r = Router::new()
        .route("/healthz", get(healthz))
        .route("/edit", post(edit))
        .route("/mask", post(mask))
        .with_state(state);
    if let Some(dir) = ui {
        r = r.nest_service("/ui", tower_http::services::ServeDir::new(dir).append_index_html_on_directories(true));
    }
    r
}

/// Loads a checkpoint into a model slot.
pub fn load_model(checkpoint: &Path, options: EditOptions) -> Result<LoadedModel> {
    let pipeline = Pipeline::load(checkpoint)?.with_options(options);
    let checkpoint_hash = CheckpointDir::new(checkpoint).content_hash()?;
    Ok(LoadedModel { pipeline, checkpoint_hash, checkpoint: Some(checkpoint.to_path_buf()) })
}

/// Binds `addr`, starts loading weights in the background and serves until
/// interrupted. Requests arriving before the weights are ready get 503.
pub async fn serve(checkpoint: PathBuf, addr: SocketAddr, options: EditOptions, ui_dir: Option<PathBuf>) -> Result<()> {
    let state = AppState::loading().with_ui_dir(ui_dir);
    let loader = state.clone();
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    tokio::task::spawn_blocking(move || match load_model(&checkpoint, options) {
        Ok(m) => {
            tracing::info!(hash = %m.checkpoint_hash, "weights loaded");
            loader.install(m);
        }
        Err(e) => tracing::error!(error = %e, "failed to load checkpoint"),
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
