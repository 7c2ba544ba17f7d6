//! Dense `f64` tensors and a tape-style reverse-mode graph.
//!
//! Only the operations the conditional GAN, batch normalization and the
//! spectral penalties need are provided. Broadcasting is limited to equal
//! shapes and single-value operands; row broadcasting is an explicit op.

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NdError {
    #[error("shape {shape:?} does not hold {len} values")]
    ShapeData { shape: Vec<usize>, len: usize },
    #[error("rows have different lengths")]
    Ragged,
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Incompatible {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got {got}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("index {index} out of range for {len} rows")]
    Index { index: usize, len: usize },
    #[error("{op} on an empty tensor")]
    Empty { op: &'static str },
    #[error("batch statistics need at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
}
