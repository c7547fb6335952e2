use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across data generation, training, evaluation and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid device parameters: {0}")]
    InvalidDevice(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate normalization bound for feature {feature}: min = max = {value}")]
    DegenerateBound { feature: usize, value: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("finite differences need at least 3 samples, got {0}")]
    TooFewSamples(usize),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss input at device {device}, vgs index {vgs_index}, vds index {vds_index}")]
    NonFiniteLoss {
        device: usize,
        vgs_index: usize,
        vds_index: usize,
    },

    #[error("training diverged at step {0}")]
    Diverged(usize),

    #[error("current source is not monotone in vgs near {vgs} V")]
    NonMonotone { vgs: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("malformed file {}: {msg}", path.display())]
    Malformed { path: PathBuf, msg: String },

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn malformed(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
