use thiserror::Error;

use crate::crossbar::CrossbarError;
use crate::data::DataError;
use crate::gnbc::GnbcError;
use crate::mapping::MappingError;

/// Crate-wide error type; each module keeps its own error enum.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gnbc(#[from] GnbcError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Crossbar(#[from] CrossbarError),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("schema violation in {artifact}: {message}")]
    Schema {
        artifact: &'static str,
        message: String,
    },
    #[error("I/O error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn schema(artifact: &'static str, message: impl Into<String>) -> Self {
        Error::Schema {
            artifact,
            message: message.into(),
        }
    }
}
