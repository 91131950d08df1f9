use thiserror::Error;

/// Errors shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    /// The dimensions fall outside `T_eff*Q < N`, `T_eff <= R <= ceil(T_eff(N-1)/(N-T_eff*Q))`.
    #[error("outside the identifiability regime: {0}")]
    Regime(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Reduction(#[from] ReductionError),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Failed preconditions of the block determinant reduction.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReductionError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },

    #[error("row set has {rows} entries but column set has {cols}")]
    SizeMismatch { rows: usize, cols: usize },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("duplicate index {0} in row or column set")]
    DuplicateIndex(usize),

    #[error("neither off-diagonal block vanishes (max entries {below:e} and {beside:e})")]
    NoZeroBlock { below: f64, beside: f64 },

    #[error("pivot block is numerically singular (sigma_min {sigma_min:e}, norm {norm:e})")]
    SingularPivot { sigma_min: f64, norm: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
