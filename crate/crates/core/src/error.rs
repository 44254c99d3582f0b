use thiserror::Error;

/// Errors returned by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("sampling: {0}")]
    Sampling(String),
    #[error("unsupported form: {0}")]
    UnsupportedForm(String),
    #[error("no spectral peak found: {0}")]
    NoPeak(String),
    #[error("root finding failed: {0}")]
    Root(String),
    #[error("step size: {0}")]
    StepSize(String),
    #[error("model assumption violated: {0}")]
    ModelAssumption(String),
    #[error("sequence: {0}")]
    Sequence(String),
    #[error("resolution: {0}")]
    Resolution(String),
    #[error("phase-space clipping: {0}")]
    Clipping(String),
    #[error("fit did not converge: {0}")]
    Fit(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_) | Error::Config(_) | Error::Json(_) | Error::UnsupportedForm(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
