//! Dense tensors and a reverse-mode differentiation tape.
//!
//! The engine is deliberately small: eager forward evaluation onto a tape,
//! one backward sweep in exact reverse recording order, gradients for both
//! parameters and inputs. Forward math runs in `f32` with 64-bit accumulation
//! inside reductions; there is no broadcasting beyond bias addition, so shape
//! errors surface immediately at record time.

mod checkpoint;
mod gradcheck;
mod graph;
pub mod reference;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError};
pub use gradcheck::{grad_check, grad_check_suite, rel_error, GradCheckReport, OpUnderTest};
pub use graph::{Graph, LstmCellIds, NodeId, Padding};
pub use tensor::Tensor;

pub(crate) use gradcheck::sample_grid;

use thiserror::Error;

/// Errors raised while recording or differentiating a graph.
#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("backward requires a scalar loss node")]
    NotScalar,
}
