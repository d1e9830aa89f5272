//! Experiment-matrix harness: configuration, trial execution, persisted run
//! records and report tables.

pub mod config;
pub mod matrix;
pub mod records;
pub mod report;
pub mod run;

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] ftlab_core::Error),
    #[error("arithmetic error: {0}")]
    Arithmetic(String),
    #[error("report error: {0}")]
    Report(String),
    #[error("record error: {0}")]
    Record(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
