use thiserror::Error;

use crate::solver::SolutionRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    Mesh(String),

    /// A parameter violates one of the problem invariants; the message names it.
    #[error("invalid parameters: {0}")]
    Param(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operation requires a nonzero function")]
    ZeroInput,

    /// `mu * |u|_{q+1}^{q+1} >= phi(t0)`: the fibering map has no interior critical points.
    #[error("fibering map has no roots (mu term {mu_term:.6e} >= phi(t0) {phi_max:.6e})")]
    NoRoots { mu_term: f64, phi_max: f64 },

    #[error("root finding failed: {0}")]
    Root(String),

    #[error("inputs to the cross energy must be nonnegative")]
    Part,

    #[error("second-order Nehari quantity {0:.3e} too close to zero")]
    NearDegenerate(f64),

    #[error("extrapolation failed: {0}")]
    Extrapolation(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("slope fit failed: {0}")]
    Fit(String),

    #[error("continuation failed: {message}")]
    Continuation { message: String, scan: Vec<(f64, f64, f64)> },

    #[error("sign-changing iterate collapsed: part norm {0:.3e}")]
    Collapse(f64),

    #[error("solver did not converge in {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Box<SolutionRecord>,
    },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
