//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("structure constants are not antisymmetric: c[{l}][{i}][{j}] != -c[{l}][{j}][{i}]")]
    NotAntisymmetric { l: usize, i: usize, j: usize },

    #[error("lambda = 0 has no block form")]
    ZeroLambda,

    #[error("numeric kernel of B(lambda) has odd complement (k = {k}, q = {q}); tolerance unusable here")]
    KernelParity { k: usize, q: usize },

    #[error("orthonormalization failed: {0}")]
    Orthonormalization(String),

    #[error("cluster structure changes along the path at segment {segment}: {detail}")]
    FrameCrossing { segment: usize, detail: String },

    #[error("finite-difference stencil leaves the stratum at {0}")]
    StencilLeavesStratum(String),

    #[error("truncation error {estimate:.3e} exceeds tolerance {tol:.3e} in {what}")]
    Truncation {
        what: &'static str,
        estimate: f64,
        tol: f64,
    },

    #[error("quadrature order too low: {what} defect {defect:.3e} above threshold {threshold:.3e}")]
    QuadratureDefect {
        what: &'static str,
        defect: f64,
        threshold: f64,
    },

    #[error("kernel unresolved by the grid: needs scale >= {needed:.3e}, has {actual:.3e}")]
    Unresolved { needed: f64, actual: f64 },

    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),

    #[error("operation requires k = 0 (invertible B(lambda)); got k = {0}")]
    RadicalNotTrivial(usize),

    #[error("unsupported kernel kind for {0}")]
    UnsupportedKernel(&'static str),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("expression error: {0}")]
    Expression(String),
}
