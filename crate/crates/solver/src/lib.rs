//! Numerical kernels shared by the grid synthesis pipeline: a sparse LU
//! factorization for network matrices and a bounded revised simplex for the
//! assignment, dispatch and line-upgrade linear programs.

pub mod lp;
pub mod sparse;

pub use lp::{solve_lp, Constraint, LinearProgram, LpSolution, Sense};
pub use sparse::{residual_inf, solve_linear, LuFactor, SparseMatrix};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("matrix is singular at pivot column {pivot}")]
    Singular { pivot: usize },
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit reached after {0} iterations")]
    IterationLimit(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
}
