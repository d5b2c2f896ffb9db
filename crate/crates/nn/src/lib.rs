//! Minimal CPU deep-learning toolkit: dense tensors, reverse-mode autodiff,
//! convolution layers, Adam and safetensors weight files.
//!
//! Everything is single-threaded and deterministic: the same inputs and
//! parameters always produce bit-identical outputs and gradients.

mod autograd;
mod error;
pub mod io;
mod kernels;
pub mod layers;
mod ops;
pub mod optim;
mod params;
mod tensor;

pub use autograd::{Gradients, Var};
pub use error::{NnError, Result};
pub use ops::{BatchNormMode, BatchStats};
pub use params::{Ctx, ParamEntry, ParamId, ParamSet};
pub use tensor::Tensor;
