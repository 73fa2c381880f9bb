use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A quadrature or truncation certificate could not be brought under the requested
    /// tolerance. The best value reached is carried along.
    #[error("certification failed for {what}: value {value:.6e}, certificate {certificate:.6e} exceeds tolerance {tolerance:.3e}")]
    Certification {
        what: String,
        value: f64,
        certificate: f64,
        tolerance: f64,
    },

    #[error("grid misaligned: {0}")]
    GridAlignment(String),

    #[error("calibration: {0}")]
    Calibration(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::Dimension { expected, got })
        }
    }
}
