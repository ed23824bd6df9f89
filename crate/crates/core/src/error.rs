use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("kernel entry r({y}|{x}) is zero; apply `support_floor` before building a cost matrix")]
    Support { y: usize, x: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("observed distribution is not realizable by the kernel (best L1 residual {residual:.3e})")]
    Infeasible { residual: f64 },

    #[error("oracle certification failed: {0}")]
    Certification(String),

    #[error("grid search over {size} states exceeds the brute-force limit of {limit}")]
    ScaleGuard { size: usize, limit: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_size(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Shape { expected, found })
    }
}
