use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid network spec: {0}")]
    Spec(String),

    #[error("forward trace is stale: recorded against revision {recorded}, params are at {current}")]
    StaleTrace { recorded: u64, current: u64 },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u16, expected: u16 },

    #[error("checkpoint fingerprint {found:016x} does not match spec fingerprint {expected:016x}")]
    Fingerprint { found: u64, expected: u64 },

    #[error("checkpoint role is {found}, expected {expected}")]
    Role { found: String, expected: String },

    #[error("parse error in {what}: {msg}")]
    Parse { what: String, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {what} is not finite")]
    Diverged { epoch: usize, batch: usize, what: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(what: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse { what: what.into(), msg: msg.into() }
    }
}
