use thiserror::Error;

/// Errors raised across the crate.
///
/// The variants split into two families that callers map to different exit
/// statuses: input problems (`Domain`, `Structural`, `Contract`, `Config`,
/// `Resolution`, `Io`, `Format`) and numerical breakdowns (`Numeric`,
/// `Schedule`, `Contraction`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("structural mismatch: {0}")]
    Structural(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("insufficient resolution: {0}")]
    Resolution(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("fixed-point iteration on interval {interval} did not converge after {iterations} iterations (contraction ratio {ratio:.4})")]
    Contraction {
        interval: usize,
        iterations: usize,
        ratio: f64,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    /// True for failures caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Structural(_)
                | Error::Contract(_)
                | Error::Config(_)
                | Error::Resolution(_)
                | Error::Io(_)
                | Error::Format(_)
        )
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
