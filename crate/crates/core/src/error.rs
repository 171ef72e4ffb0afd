use std::path::PathBuf;

use crate::sphere::GeoPos;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("bearing undefined between {from} and {to} (identical or antipodal)")]
    UndefinedBearing { from: GeoPos, to: GeoPos },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("map is constant; {0} is undefined")]
    ConstantMap(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint version {found} is not supported (reader understands {supported})")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }

    /// Failures caused by the numbers themselves rather than by bad inputs or files.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::ConstantMap(_) | Error::UndefinedBearing { .. })
    }
}
