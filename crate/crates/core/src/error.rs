use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FastError {
    #[error("text does not fit the 64x256 canvas: {0}")]
    GlyphOverflow(String),
    #[error("unknown font id `{0}`")]
    MissingFont(String),
    #[error("insufficient assets: {0}")]
    InsufficientAssets(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("cascaded stage-II training needs a stage-I checkpoint at {0}")]
    MissingStage1Checkpoint(PathBuf),
    #[error("checkpoint not found or incomplete: {0}")]
    MissingCheckpoint(String),
    #[error("perceptual backbone unavailable: {0}")]
    BackboneUnavailable(String),
    #[error("invalid text: {0}")]
    InvalidText(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Nn(#[from] fast_nn::NnError),
}

pub type Result<T, E = FastError> = std::result::Result<T, E>;
