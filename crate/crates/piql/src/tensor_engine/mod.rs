//! Dense 64-bit tensor numerics with reverse-mode differentiation.
//!
//! Everything in the training path is a 2-D matrix (a scalar is 1x1). The
//! [`Tape`] records operations as they execute; [`Tape::backward`] replays
//! them in reverse to accumulate gradients. Training runs in f64 so the
//! finite-difference checks in [`gradcheck`] stay tight; checkpoints can be
//! persisted in f32 or f64 (see [`checkpoint`]).

mod checkpoint;
mod gradcheck;
mod nn;
mod optim;
pub(crate) mod tape;

pub use checkpoint::{Checkpoint, CheckpointError, Dtype, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, GradCheckReport};
pub use nn::{forward_block, layer_norm, AttentionMask, BlockParamNames, TransformerConfig};
pub use optim::{adamw_step, cosine_schedule, AdamWConfig, OptimizerState, ScheduleError, StepError};
pub use tape::{Gradients, GraphCtx, ParamStore, Tape, Var};

/// Matrix type used throughout the engine.
pub type Matrix = ndarray::Array2<f64>;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch: expected {expected}, got {got} in {context}")]
    ShapeMismatch {
        expected: String,
        got: String,
        context: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}
