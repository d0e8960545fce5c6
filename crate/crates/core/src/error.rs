use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("rank r={r} out of range for n={n} (need 1 <= r <= n)")]
    RankOutOfRange { n: usize, r: usize },

    #[error("factor is numerically rank deficient (sigma_min/sigma_max = {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("no full-rank factor drawn after {attempts} attempts")]
    RedrawExhausted { attempts: usize },

    #[error("matrix is not symmetric (relative asymmetry {relative:e})")]
    NotSymmetric { relative: f64 },

    #[error("columns are not orthonormal (Gram deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },

    #[error("index ({i}, {j}) out of range for n={n} (indices are 0-based)")]
    IndexOutOfRange { i: usize, j: usize, n: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "dense materialization needs {dim}x{dim} entries but the cap is dim <= {cap}; use the matrix-free path"
    )]
    DenseCapExceeded { dim: usize, cap: usize },

    #[error("eigenvalue iteration failed to converge at index {index} after {iterations} iterations")]
    EigenNoConvergence { index: usize, iterations: usize },

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("malformed instance: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
