use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid technology profile `{name}`: {reason}")]
    Technology { name: String, reason: String },

    #[error("unknown technology profile `{0}`")]
    UnknownTechnology(String),

    #[error("invalid grid spec: {0}")]
    GridSpec(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("density {0} is outside (0, 1]")]
    Density(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("invalid training configuration: {0}")]
    TrainConfig(String),

    #[error("invalid experiment plan: {0}")]
    Plan(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config error in {path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("{0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
