//! Selective fine-grained interaction (SFI) news recommendation.
//!
//! A title encoder produces per-word multi-level representations and one
//! news vector. A learnable selector scores every history item against the
//! candidate, keeps the top K, and gates them by a threshold. The kept items
//! are matched word-by-word against the candidate through a 3-D CNN, while
//! coarse dot products cover the full history.

pub mod dataio;
pub mod encoder;
pub mod evalbench;
pub mod interactor;
pub mod model;
pub mod numerics;
pub mod selector;

use thiserror::Error;

pub use numerics::{Graph, NumericsError, Tensor, Var};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss on sample {sample}: {detail}")]
    NonFiniteLoss { sample: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
