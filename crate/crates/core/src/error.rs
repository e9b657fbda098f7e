use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("boundary data violates the compatibility condition (net flux {flux:e})")]
    Incompatible { flux: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("time {t} outside control horizon [0, {horizon}]")]
    OutsideHorizon { t: f64, horizon: f64 },

    #[error("insufficient samples: need {needed}, have {have}")]
    InsufficientSamples { needed: usize, have: usize },

    #[error("malformed artifact: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for validation problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_)
            | Error::Dimension { .. }
            | Error::Incompatible { .. }
            | Error::OutsideHorizon { .. }
            | Error::InsufficientSamples { .. }
            | Error::Artifact(_)
            | Error::Io(_)
            | Error::Json(_) => 1,
            Error::Resolution(_) | Error::Numerical(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension { expected, actual })
    }
}
