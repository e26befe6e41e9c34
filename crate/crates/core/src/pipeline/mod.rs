//! Configuration, CSV formats and the end-to-end experiment harness.
//!
//! The stages are: estimate the channel on a source table, fit `P̂[E|S]` on
//! the estimation split of each target, decode the held-out split, and score
//! it against its truth columns together with the `Y_Z` baseline.

pub mod config;
pub mod evaluate;
pub mod experiment;
pub mod io;

use std::path::PathBuf;

use thiserror::Error;

use crate::channel::ChannelError;
use crate::datagen::DatagenError;
use crate::decoder::DecoderError;
use crate::estimator::EstimatorError;
use crate::metrics::MetricError;
use crate::types::TypeError;

pub use config::{ConfigError, ExperimentConfig, MethodChoice};
pub use evaluate::{evaluate, MetricRow};
pub use experiment::{run_experiment, write_experiment, ExperimentOutput, RunRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("table lacks required column {0}")]
    MissingColumn(&'static str),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
}

impl PipelineError {
    /// 1: configuration or validation, 2: data, 3: numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Datagen(DatagenError::Invalid { .. }) => 1,
            PipelineError::Estimator(EstimatorError::InvalidConfig(_)) => 1,
            PipelineError::Decoder(DecoderError::BadMassFloor(_)) => 1,
            PipelineError::Channel(ChannelError::BadSmoothing(_)) => 1,
            PipelineError::Datagen(DatagenError::RejectionLimit { .. }) => 3,
            PipelineError::Estimator(EstimatorError::InvalidChannel(_)) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        PipelineError::Format { path: path.into(), message: message.into() }
    }
}
