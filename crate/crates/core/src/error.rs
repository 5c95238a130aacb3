use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("point sets differ: {0}")]
    PointMismatch(&'static str),

    #[error(
        "row {row} has zero weighted kernel mass (underflow); increase the bandwidth {bandwidth_hint}"
    )]
    DegenerateRow { row: usize, bandwidth_hint: String },

    #[error("ill-posed system: smallest singular value {sigma_min:e} is below {threshold:e} and no rank cutoff is set")]
    IllPosed { sigma_min: f64, threshold: f64 },

    #[error("singular value decomposition did not converge")]
    SvdNotConverged,

    #[error("bin {bin} of {bins} is empty; use fewer bins")]
    EmptyBin { bin: usize, bins: usize },

    #[error("malformed model file: {0}")]
    Format(#[from] serde_json::Error),

    #[error("unsupported model file version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u64, expected: u64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter { .. } => ErrorKind::Usage,
            Error::DegenerateRow { .. } | Error::IllPosed { .. } | Error::SvdNotConverged => {
                ErrorKind::Numerical
            }
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
