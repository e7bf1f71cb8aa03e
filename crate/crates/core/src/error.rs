use std::path::PathBuf;

use ds2c2_autodiff::AdError;
use thiserror::Error;

use crate::link::FrameError;
use crate::nn::{CheckpointError, ModelParams};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("value out of domain in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("frame: {0}")]
    Frame(#[from] FrameError),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("numeric failure in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, last_good: Box<ModelParams> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Module that raised the error, for user-facing messages.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Autodiff(_) => "tensor-autodiff",
            Error::Shape { .. } | Error::Domain { .. } => "core",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Checkpoint(_) => "nn-blocks",
            Error::Frame(_) => "link",
            Error::Dataset(_) => "pipeline",
            Error::Numeric { .. } | Error::NonFiniteLoss { .. } => "pipeline",
        }
    }
}
