//! Binary one-dimensional CNN for EEG seizure prediction.

pub mod binary;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Backend, ConvMode, InferenceEngine, Model, ModelConfig};
pub use tensor::{Axis, DenseTensor, Real, Shape};
