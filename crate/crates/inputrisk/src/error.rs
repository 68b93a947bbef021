use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    /// A malformed row in a line- or row-oriented file. `row` is 0-based.
    #[error("{}: row {row}: {msg}", path.display())]
    Row { path: PathBuf, row: usize, msg: String },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("feature manifest hash {found} does not match the model's {expected}")]
    ManifestMismatch { expected: String, found: String },

    #[error("no trace for example `{0}`")]
    MissingTrace(String),

    #[error("no prediction for example `{0}`")]
    MissingPrediction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Remote(#[from] crate::remote::RemoteError),

    #[error(transparent)]
    Core(#[from] inputrisk_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn row(path: impl Into<PathBuf>, row: usize, msg: impl std::fmt::Display) -> Self {
        Error::Row {
            path: path.into(),
            row,
            msg: msg.to_string(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl std::fmt::Display) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.to_string(),
        }
    }
}
