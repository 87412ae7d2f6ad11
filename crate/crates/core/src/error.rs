use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("probability {0} is outside (0, 1)")]
    InvalidProbability(f64),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("level-2 column `{column}` is not constant within cluster {cluster}")]
    NonConstantLevel2 { column: String, cluster: usize },

    #[error("dataset schema violation: {0}")]
    Schema(String),

    #[error("singular design: fixed-effect columns are linearly dependent")]
    SingularDesign,

    #[error("non-finite likelihood")]
    NonFiniteLikelihood,

    #[error("improper conditional posterior: {0}")]
    ImproperPosterior(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than by the inputs'
    /// shape (singular design, improper conditionals, non-finite values).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SingularDesign | Error::NonFiniteLikelihood | Error::ImproperPosterior(_)
        )
    }
}

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be finite and > 0",
        })
    }
}
