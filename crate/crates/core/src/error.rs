use gridsynth_solver::SolverError;

/// Errors raised anywhere in the synthesis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("{file}: record {record}: field `{field}`: {message}")]
    Schema { file: String, record: String, field: String, message: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("stage `{stage}` failed (checkpoint {checkpoint}): {source}")]
    Stage { stage: String, checkpoint: String, source: Box<GridError> },
}

impl GridError {
    pub fn schema(file: &str, record: impl ToString, field: &str, message: impl ToString) -> Self {
        Self::Schema {
            file: file.to_string(),
            record: record.to_string(),
            field: field.to_string(),
            message: message.to_string(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Process exit code: 2 validation, 3 numerical, 4 infeasibility.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Schema { .. } | Self::Validation(_) | Self::Io { .. } => 2,
            Self::Numerical(_) => 3,
            Self::Infeasible(_) => 4,
            Self::Solver(e) => match e {
                SolverError::Infeasible => 4,
                SolverError::Dimension(_) | SolverError::NonFinite(_) => 2,
                _ => 3,
            },
            Self::Stage { source, .. } => source.exit_code(),
        }
    }
}

pub type Result<T, E = GridError> = std::result::Result<T, E>;
