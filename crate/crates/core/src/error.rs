use thiserror::Error;

use crate::tensor::TensorError;
use crate::video::VideoError;

/// Errors from model construction, forward passes and training loops.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error("{dim} extent {extent} is not divisible by {by}")]
    Divisibility { dim: &'static str, extent: usize, by: usize },
    #[error("head count {heads} does not divide model dim {dim}")]
    HeadDivisibility { dim: usize, heads: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("token batch already has a classification token")]
    AlreadyHasCls,
    #[error("{0}")]
    Grid(String),
    #[error("attention trace missing: {0}")]
    MissingTrace(String),
    #[error("head/class mismatch: head has {head} classes, manifest has {manifest}")]
    ClassMismatch { head: usize, manifest: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("loss became non-finite at step {step}")]
    NonFinite { step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
