//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("matrix row {0} is zero; solver kernels require nonzero rows")]
    ZeroRow(usize),

    #[error("matrix is identically zero")]
    ZeroMatrix,

    #[error("right-hand side has zero norm; relative residual is undefined")]
    ZeroRhs,

    #[error("vector is identically zero")]
    ZeroVector,

    #[error("power iteration did not converge within {max_iters} iterations (last rayleigh residual {residual:e})")]
    NoConvergence { max_iters: usize, residual: f64 },

    #[error("matrix has {cols} columns, above the subset-enumeration cap {max_cols}; supply gamma externally")]
    TooLarge { cols: usize, max_cols: usize },

    #[error("subgradient mismatch: ||S_lambda(x*) - x||_inf = {deviation:e} exceeds {tol:e}")]
    SubgradientMismatch { deviation: f64, tol: f64 },

    #[error("batch size eta={eta} invalid for {context}")]
    InvalidEta { eta: usize, context: &'static str },

    #[error("{quantity} = {value} is outside its admissible range: {constraint}")]
    OutOfRange {
        quantity: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("sparsity s={s} invalid for n={n} (need 1 <= s <= n)")]
    InvalidSparsity { s: usize, n: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error at line {line}, column {column}: {message}")]
    Format {
        line: usize,
        column: usize,
        message: String,
    },
}

impl Error {
    pub fn format(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            column,
            message: message.into(),
        }
    }

    /// Errors that indicate bad user input rather than a numerical failure.
    /// The CLI maps these to exit code 1, everything else to exit code 2.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::Io(_) | Error::Format { .. }
        )
    }
}
