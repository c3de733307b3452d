//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("sampled parameter {0:?} is not a grid point")]
    PointNotOnGrid(Vec<f64>),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("design matrix is rank deficient and no ridge was supplied")]
    RankDeficient,

    #[error("invalid probability level: {0}")]
    InvalidLevel(String),

    #[error("functional {functional} requires {requirement}")]
    FunctionalUnsupported {
        functional: &'static str,
        requirement: &'static str,
    },

    #[error("empty scenario batch")]
    EmptyBatch,

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("plant query failed: {0}")]
    PlantFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
