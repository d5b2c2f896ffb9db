//! Two-stage scene text editing: a mask generator predicts the target text
//! mask in the source style, then an image generator transfers the source
//! appearance onto that mask.

pub mod checkpoint;
pub mod data_synth;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod image;
pub mod losses;
pub mod mask_unet;
pub mod metrics;
pub mod pipeline;
pub mod service;
pub mod trainer;

pub use error::{FastError, Result};
pub use image::TensorImage;
