use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A normal matrix or weight that must be positive definite is not.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("state-cost curvature at t={t} is singular after regularization {regularization:e}; increase the regularization")]
    SingularCurvature { t: usize, regularization: f64 },

    #[error("invalid cost: {0}")]
    InvalidCost(String),

    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("rollout diverged at t={0}")]
    Divergence(usize),

    #[error("artifact: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::NonFinite(_) => "non_finite",
            Error::Precondition(_) => "precondition",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::SingularCurvature { .. } => "singular_curvature",
            Error::InvalidCost(_) => "invalid_cost",
            Error::Validation { .. } => "validation",
            Error::Divergence(_) => "divergence",
            Error::Artifact(_) => "artifact",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. } | Error::Dimension(_) | Error::Json(_) | Error::InvalidCost(_)
        )
    }
}
