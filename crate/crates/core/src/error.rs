use thiserror::Error;

/// Errors raised by the learners, generators and file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input outside the supported domain: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid interval [{a}, {b}]: the right end must exceed the left end")]
    Interval { a: f64, b: f64 },

    #[error("trajectory {index} has {len} samples, at least 2 are required")]
    TrajectoryTooShort { index: usize, len: usize },

    #[error("factorization failed after jitters {jitters:?}")]
    Conditioning { jitters: Vec<f64> },

    #[error("state diverged at t = {time} (step {step})")]
    Divergence { time: f64, step: usize },

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("search failed: {0}")]
    SearchFailed(String),

    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-parsable category used in CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) | Error::Shape(_) | Error::Data(_) => "data",
            Error::Config(_) | Error::Interval { .. } => "config",
            Error::TrajectoryTooShort { .. } | Error::GridTooSmall(_) => "data",
            Error::Conditioning { .. } => "numerical",
            Error::Divergence { .. } => "divergence",
            Error::Unsupported(_) => "unsupported",
            Error::SearchFailed(_) => "search",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
