//! Model assembly, click scoring, training and checkpoints.

pub mod checkpoint;
mod config;
mod forward;
mod params;
mod train;

pub use config::{ModelConfig, SelectionMode};
pub use forward::{
    history_vars, sampled_softmax_loss, sampled_softmax_value, score_cached, score_graph, score_uncached, HistoryVars,
    NewsVars, ScoreTrace, ScoreVars,
};
pub use params::{ModelParams, ModelVars};
pub use train::{fit, mean_loss, sample_gradient, train_epoch, Adam, EpochStats, SampleGrad};
