use thiserror::Error;

/// Errors raised by the simulation and verification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("quadrature did not converge: {0}")]
    Divergence(String),
    #[error("integrability class check failed: {0}")]
    Class(String),
    #[error("exponential moment condition violated: {0}")]
    Moment(String),
    #[error("declared bound violated: {0}")]
    Bound(String),
    #[error("maturity not on the surface grid: {0}")]
    Maturity(String),
    #[error("normal equations are singular: {0}")]
    Singularity(String),
    #[error("representation does not reconstruct the martingale: {0}")]
    Reconstruction(String),
    #[error("measure has no concentration point: {0}")]
    NotConcentrated(String),
    #[error("stopping level too small: {0}")]
    DegenerateStop(String),
    /// Invalid configuration; `path` names the offending field (e.g. `levy.q`).
    #[error("invalid value at `{path}`: {message}")]
    Validation { path: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by numerical non-convergence rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence(_)
                | Error::Class(_)
                | Error::Moment(_)
                | Error::Singularity(_)
                | Error::Reconstruction(_)
                | Error::DegenerateStop(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
