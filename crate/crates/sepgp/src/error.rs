use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum SepError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error at row {row}, column {col}: {msg}")]
    Csv { row: usize, col: usize, msg: String },

    #[error("label at row {row} is {value}; accepted encodings are {{-1,+1}} and {{0,1}}")]
    Label { row: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error(
        "kernel matrix is not positive definite even with jitter {max_jitter:.3e} \
         (smallest pivot {pivot:.3e}); inducing points may coincide"
    )]
    Conditioning { max_jitter: f64, pivot: f64 },

    #[error("posterior precision is indefinite; offending negative-precision sites: {indices:?}")]
    IndefinitePosterior { indices: Vec<usize> },

    #[error("inconsistent EP state at site {index}: 1 - nu*proj_var = {value:.3e} <= 0")]
    InconsistentState { index: usize, value: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("distributed training error: {0}")]
    Distributed(String),

    #[error("protocol version mismatch: expected {expected}, got {got}")]
    Protocol { expected: String, got: String },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SepError>;
