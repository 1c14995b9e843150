//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records primitive operations during the forward pass; each
//! node stores its output value and the ids of its inputs (which are
//! always strictly earlier, so the graph is acyclic by construction).
//! [`Tape::backward`] replays the tape in reverse, accumulating exact
//! vector-Jacobian products per node in a fixed order, so gradients are
//! bit-identical across replays.
//!
//! Every primitive checks its output for NaN/Inf and fails with the
//! offending node id, which is how training detects divergence.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite output of {op} at node {node}")]
    NonFinite { op: &'static str, node: usize },
    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
}
