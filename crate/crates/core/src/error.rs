use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("configuration {config} is incompatible with this model: {reason}")]
    IncompatibleConfig { config: String, reason: String },

    #[error("allocation sum needs {needed} terms, budget is {budget}")]
    CombinatorialBudget { needed: f64, budget: u64 },

    #[error("unsupported component family for {0}")]
    UnsupportedFamily(&'static str),

    #[error("adaptive quadrature did not reach rel_tol {rel_tol:e} within {subdivisions} subdivisions (estimate {estimate}, error {error:e})")]
    QuadratureFailure { rel_tol: f64, subdivisions: usize, estimate: f64, error: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("chain initialisation failed: {0}")]
    Initialization(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by malformed user input rather than by a
    /// failure during computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidModel(_)
                | Error::IncompatibleConfig { .. }
                | Error::UnsupportedFamily(_)
                | Error::DimensionMismatch { .. }
                | Error::Domain(_)
                | Error::InvalidSpec(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
