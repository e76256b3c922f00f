//! Minimal float64 tensor library with reverse-mode differentiation for the
//! op set the recommender needs.

mod graph;
pub(crate) mod kernels;
mod tensor;

pub use graph::{Graph, Var, INVALID_SCORE};
pub use kernels::pooled_extent;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("index {index} out of range for extent {extent}")]
    Index { index: usize, extent: usize },
    #[error("backward already ran on this graph")]
    BackwardTwice,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalar(Vec<usize>),
}
