use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward called before forward produced node {node}")]
    BackwardBeforeForward { node: usize },

    #[error("invalid maze size {size}: must be odd and >= 5")]
    InvalidMazeSize { size: usize },

    #[error("action {action} out of range (N_act = {n_act})")]
    ActionOutOfRange { action: usize, n_act: usize },

    #[error("step called on a finished episode")]
    StepAfterDone,

    #[error("not enough replay data for {what}")]
    InsufficientData { what: &'static str },

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("checkpoint mismatch: {0}")]
    ResumeMismatch(String),

    #[error("worker {worker} failed: {source}")]
    Worker {
        worker: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            op,
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}
