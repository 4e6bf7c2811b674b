use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("operation undefined for a Dirac (kappa = inf) posterior: {0}")]
    Dirac(&'static str),

    #[error("degenerate normalization: {0}")]
    Degenerate(String),

    #[error("rejection sampler exceeded {0} iterations")]
    RejectionCap(u64),

    #[error("acceptance starvation: {accepted} of {attempts} candidate pairs accepted")]
    Starvation { accepted: u64, attempts: u64 },

    #[error("generative process re-initialization failed after {attempts} attempts: {reason}")]
    Reinit { attempts: usize, reason: String },

    #[error("non-finite loss at batch {step}")]
    NonFiniteLoss {
        step: usize,
        batch: Box<crate::genproc::ContrastiveBatch>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by numerics rather than user input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Degenerate(_)
                | Error::RejectionCap(_)
                | Error::Starvation { .. }
                | Error::Reinit { .. }
                | Error::NonFiniteLoss { .. }
        )
    }
}
