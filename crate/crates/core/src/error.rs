use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The variants follow the failure classes of each stage so that callers
/// (and the CLI exit-code mapping) can tell configuration mistakes apart
/// from numerical blow-ups.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no window fits: {0}")]
    EmptyWindow(String),
    #[error("non-finite activation in {stage} layer {layer}")]
    Numerics { stage: &'static str, layer: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("ledger error: {0}")]
    Ledger(String),
    #[error("empty parameter block: {0}")]
    Block(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("test-time adaptation failed: {0}")]
    Adapt(String),
    #[error("singular closed form: {0}")]
    Singularity(String),
    #[error("report error: {0}")]
    Report(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code used by the CLI: 2 for configuration problems,
    /// 3 for numerics, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Schema(_) | Error::Load { .. } | Error::Json(_) => 2,
            Error::Numerics { .. } | Error::Divergence(_) | Error::Singularity(_) => 3,
            _ => 1,
        }
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
