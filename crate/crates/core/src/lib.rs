//! Zero-inflated Tweedie graph forecasting of road-level crash risk.
//!
//! A GRU encodes each road's recent history, two graph attention layers
//! mix information between neighbouring roads, and four linear heads emit
//! the parameters of a zero-inflated Tweedie distribution per road and
//! horizon step.

pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod distcheck;
pub mod encoder;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod tensor;
pub mod train;
pub mod tweedie;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(#[from] data::DataError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("numeric: {0}")]
    Tensor(#[from] tensor::TensorError),
    #[error("distribution: {0}")]
    Dist(#[from] tweedie::DistError),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error("check failed: {0}")]
    Check(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// 1 for usage/config problems, 2 for data and files, 3 for numeric
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) | Error::Checkpoint(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 2,
            Error::Tensor(_) | Error::Dist(_) | Error::Diverged { .. } | Error::Check(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
