use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("vector field singular at t={t} (denominator {denominator:e})")]
    Singularity { t: f64, denominator: f64 },

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("sampling produced a non-finite state at step {step}")]
    SamplingDiverged { step: usize },

    #[error("too few frames: need at least {needed}, got {got}")]
    TooFewFrames { needed: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::Shape(_) => "shape",
            Error::BadMagic { .. } => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::Truncated { .. } => "truncated",
            Error::Malformed(_) => "malformed",
            Error::NonFinite(_) => "non_finite",
            Error::Singularity { .. } => "singularity",
            Error::Divergence { .. } => "divergence",
            Error::SamplingDiverged { .. } => "sampling_diverged",
            Error::TooFewFrames { .. } => "too_few_frames",
            Error::InvalidInput(_) => "invalid_input",
            Error::SingularCovariance(_) => "singular_covariance",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
