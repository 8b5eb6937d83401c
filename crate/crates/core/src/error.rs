//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("map has no free cells to sample from")]
    UnsampleableMap,

    #[error("pose lies in occupied or unknown space: {0}")]
    InvalidPose(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("world generation failed: {0}")]
    WorldGeneration(String),

    #[error("detection unavailable: {0}")]
    DetectionUnavailable(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl ToString, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: impl ToString, message: impl ToString) -> Self {
        Error::Parse {
            path: path.to_string(),
            message: message.to_string(),
        }
    }

    /// Stable machine-readable tag for each error class, used by the CLI's
    /// structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::OutOfBounds(_) => "out_of_bounds",
            Error::UnsampleableMap => "unsampleable_map",
            Error::InvalidPose(_) => "invalid_pose",
            Error::InvalidTrajectory(_) => "invalid_trajectory",
            Error::WorldGeneration(_) => "world_generation",
            Error::DetectionUnavailable(_) => "detection_unavailable",
            Error::Io { .. } => "io",
        }
    }
}
