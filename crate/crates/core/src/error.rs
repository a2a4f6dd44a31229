use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RcmError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid boundary condition: {0}")]
    InvalidBoundary(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("domain too large for enumeration: {edges} edges (cap {cap})")]
    TooLarge { edges: usize, cap: usize },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, RcmError>;

impl From<std::io::Error> for RcmError {
    fn from(e: std::io::Error) -> Self {
        RcmError::Io(e.to_string())
    }
}

impl From<csv::Error> for RcmError {
    fn from(e: csv::Error) -> Self {
        RcmError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for RcmError {
    fn from(e: serde_json::Error) -> Self {
        RcmError::Io(e.to_string())
    }
}
