use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to load {path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error in {file} at row {row}, column {column}: {message}")]
    Parse {
        file: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("shape mismatch: expected {expected} columns, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("encode error: {0}")]
    Encode(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("unknown method `{name}`; registered methods: {}", .available.join(", "))]
    UnknownMethod { name: String, available: Vec<String> },

    #[error("method `{name}` does not belong to the {expected} family")]
    Family { name: String, expected: String },

    #[error("method `{method}` does not support {task} tasks")]
    UnsupportedTask { method: String, task: String },

    #[error("search space error at {path}: {message}")]
    Space { path: String, message: String },

    #[error("tuning failed: all {} trials failed", .log.len())]
    Tuning { log: Vec<String> },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
