use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("requested {requested} rows but only {available} are available")]
    SizeOverflow { requested: usize, available: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("coordinate descent did not converge after {sweeps} sweeps (KKT residual {kkt_residual:e})")]
    NotConverged { sweeps: usize, kkt_residual: f64 },

    #[error("elastic-net fit sits on an active-set breakpoint at coordinate {coordinate}")]
    Breakpoint { coordinate: usize },

    #[error("model family does not provide a λ-Jacobian")]
    JacobianUnavailable,

    #[error("dataset has no stored truth column")]
    MissingTruth,

    #[error("malformed dataset file: {0}")]
    Format(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
