use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the pipeline. The display string is prefixed with
/// the owning module so command-line failures can be traced back.
#[derive(Debug, Error)]
pub enum Error {
    #[error("csi-data: parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("csi-data: format error: {0}")]
    Format(String),

    #[error("synthgen: {0}")]
    Scenario(String),

    #[error("preprocess: {0}")]
    Preprocess(String),

    #[error("preprocess: degenerate window: {0}")]
    DegenerateWindow(String),

    #[error("tensor-nn: shape mismatch: {0}")]
    Shape(String),

    #[error("tensor-nn: non-finite value in {op}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { op: &'static str, step: Option<usize> },

    #[error("tensor-nn: uninitialized running stats: {0}")]
    UninitializedRunningStats(String),

    #[error("tensor-nn: checkpoint: {0}")]
    Checkpoint(String),

    #[error("model: {0}")]
    Model(String),

    #[error("model: training diverged at epoch {epoch} (loss is not finite)")]
    Divergence { epoch: usize },

    #[error("evalkit: {0}")]
    Eval(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("io: {0}")]
    Io(#[from] io::Error),
}
