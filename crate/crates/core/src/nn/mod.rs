//! Minimal dense numeric engine: encoder `f`, projector `g`, explicit
//! backward passes, SGD with warmup + cosine decay, and checkpoints.
//!
//! Activations are `B x features` matrices in 64-bit floats; images are
//! flattened channel-major.

mod checkpoint;
mod model;
mod network;
mod optim;
mod spec;

pub use checkpoint::{ModelCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{ForwardPass, Model, ModelSpec, ParamSet, ParamSlot, Tape};
pub use network::{
    standardize_backward, standardize_forward, Layer, Mode, Network, STANDARDIZE_EPS,
};
pub use optim::{sgd_step, LrSchedule, OptimState};
pub use spec::{format_layers, parse_layers, LayerSpec, Shape};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid layer specification: {0}")]
    Spec(String),
    #[error("{layer}: batch statistics need at least 2 samples, got {batch}")]
    BatchTooSmall { batch: usize, layer: String },
    #[error("non-finite gradient in {layer}")]
    NonFinite { layer: String },
    #[error("gradient shape mismatch: {0}")]
    GradShape(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NnError {
    pub(crate) fn in_layer(self, name: &str) -> Self {
        match self {
            NnError::BatchTooSmall { batch, .. } => NnError::BatchTooSmall {
                batch,
                layer: name.to_string(),
            },
            NnError::Shape(msg) => NnError::Shape(format!("{name}: {msg}")),
            other => other,
        }
    }
}
