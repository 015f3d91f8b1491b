use thiserror::Error;

pub type Result<T> = std::result::Result<T, DominoError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DominoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("firm {firm}: value {value} is not above barrier {barrier}")]
    NotAboveBarrier { firm: usize, value: f64, barrier: f64 },

    #[error("guard `{guard}` violated: {detail}")]
    Guard { guard: &'static str, detail: String },

    #[error("degenerate conditioning: {0}")]
    DegenerateConditioning(String),

    #[error("invalid portfolio: {0}")]
    InvalidPortfolio(String),

    #[error("label mismatch: {0}")]
    LabelMismatch(String),

    #[error("config parse error: {0}")]
    Parse(String),
}

impl DominoError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        DominoError::InvalidArgument(msg.into())
    }

    pub(crate) fn guard(guard: &'static str, detail: impl Into<String>) -> Self {
        DominoError::Guard {
            guard,
            detail: detail.into(),
        }
    }
}
