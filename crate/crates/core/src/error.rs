use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum PsalmError {
    #[error("domain error: {0}")]
    Domain(String),

    /// The density or a latent expectation is undefined at this point
    /// (an observation coincides with a component location).
    #[error("singular point at observation {row}, component {component}")]
    SingularPoint { row: usize, component: usize },

    /// A density or expectation evaluated exactly at its singular point.
    #[error("singular point: {0}")]
    Singular(String),

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("degenerate component {component}: {reason}")]
    Degenerate { component: usize, reason: String },

    /// Every observation has zero density under every component.
    #[error("numerical failure at observation {row}: {reason}")]
    Numerical { row: usize, reason: String },

    #[error("invalid model code `{code}`; valid codes are {valid}")]
    ModelCode { code: String, valid: String },

    #[error("fit failed for all {starts} starts: {diagnostics}")]
    FitFailed { starts: usize, diagnostics: String },

    #[error("parse error at row {row}, column {column}: {reason}")]
    Parse {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, PsalmError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(PsalmError::Domain(msg.into()))
}
