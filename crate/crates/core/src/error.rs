use thiserror::Error;

#[derive(Debug, Error)]
pub enum FwiError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParameter { key: String, reason: String },
    #[error("Courant number {courant:.4} violates the stability limit (must be < 1)")]
    CflViolation { courant: f64 },
    #[error("indicator must be positive, found {value} at node {node}")]
    NonPositiveIndicator { node: usize, value: f64 },
    #[error("position {0:?} is outside the grid")]
    OutOfRange(Vec<usize>),
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error in `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FwiError {
    pub(crate) fn param(key: &str, reason: impl Into<String>) -> Self {
        FwiError::InvalidParameter {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, FwiError>;
