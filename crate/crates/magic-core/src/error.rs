use thiserror::Error;

#[derive(Debug, Error)]
pub enum MagicError {
    #[error("invalid local dimension {0}: only d = 2 and d = 3 are supported")]
    InvalidLocalDim(u8),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid model specification: {0}")]
    InvalidModel(String),

    #[error("state dimension {dim} exceeds the configured cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),

    #[error("enumeration of {0} Pauli strings exceeds the oracle cap {1}")]
    EnumerationCap(usize, usize),

    #[error("operator not decomposable in the duality generating set: {0}")]
    NotDualizable(String),

    #[error("chain failure: {0}")]
    Chain(String),

    #[error("estimator failure: {0}")]
    Estimator(String),

    #[error("analysis failure: {0}")]
    Analysis(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, MagicError>;
