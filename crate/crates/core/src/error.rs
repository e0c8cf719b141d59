use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("schedule does not fit sequence length {n}: {reason}")]
    ScheduleMismatch { n: usize, reason: String },

    #[error("enumerating {k}^{n} sequences exceeds the limit of {limit}")]
    EnumerationGuard { k: usize, n: usize, limit: u64 },

    #[error("position {0} is not masked")]
    NotMasked(usize),

    #[error("sequence contains a masked position")]
    MaskedInput,

    #[error("token {token} out of range for codebook size {k}")]
    TokenOutOfRange { token: usize, k: usize },

    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("observed tokens have zero probability under the chain")]
    ZeroLikelihood,

    #[error("matrix is not positive semidefinite (eigenvalue {0})")]
    NotPsd(f64),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by user-supplied configuration or inputs, as
    /// opposed to failures during computation or I/O.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Validation(_) | Error::Schema(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
