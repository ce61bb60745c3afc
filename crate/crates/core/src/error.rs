//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the solvers, the scenario loader and the experiment runners.
#[derive(Debug, Error)]
pub enum Error {
    /// Input matrix failed the Hermitian symmetry check.
    #[error("matrix is not Hermitian: relative asymmetry {asymmetry:.3e} exceeds {tolerance:.3e}")]
    NotHermitian { asymmetry: f64, tolerance: f64 },

    /// Input matrix failed a positive-semidefiniteness check.
    #[error("matrix is not positive semidefinite: min eigenvalue {min_eig:.3e} (trace {trace:.3e})")]
    NotPsd { min_eig: f64, trace: f64 },

    /// A rank-one direction was requested from a (numerically) zero matrix.
    #[error("cannot extract a direction from a zero matrix")]
    ZeroMatrix,

    /// Malformed optimization problem.
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    /// The interior-point solver broke down.
    #[error("SDP solver failed: {0}")]
    SolverFailure(String),

    /// An argument was outside its documented domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Bisection or alternation was started from an infeasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Scenario file failed to parse or validate.
    #[error("scenario {field}: {reason}")]
    Validation { field: String, reason: String },

    /// Requested experiment is not in the catalog.
    #[error("unknown experiment '{name}'; available: {catalog}")]
    UnknownExperiment { name: String, catalog: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
