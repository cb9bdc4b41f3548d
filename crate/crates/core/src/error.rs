use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// The model is undefined at a state with zero total rate (k = 0).
    #[error("degenerate state: total rate vanishes at k = ({k1}, {k2})")]
    DegenerateState { k1: f64, k2: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite integrand value at k = ({k1}, {k2})")]
    NonFinite { k1: f64, k2: f64 },

    #[error("time {t} is outside the simulated range [0, {t_last}]")]
    OutOfRange { t: f64, t_last: f64 },

    #[error("insufficient trajectory: {0}")]
    InsufficientTrajectory(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("stability violation: dt = {dt} exceeds the explicit limit {limit}")]
    StabilityViolation { dt: f64, limit: f64 },

    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("experiment `{experiment}`, replica {replica}: {source}")]
    Replica {
        experiment: String,
        replica: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
