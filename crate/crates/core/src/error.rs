use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("ingestion failed for record `{id}`: {reason}")]
    Ingestion { id: String, reason: String },

    #[error("record `{id}` has unknown expression label `{value}`")]
    Label { id: String, value: String },

    #[error("{path}:{line}: malformed manifest line: {reason}")]
    ManifestFormat { path: PathBuf, line: usize, reason: String },

    #[error("cannot compose `{name}`: duplicate record id `{id}`")]
    Composition { name: String, id: String },

    #[error("invalid manifest `{name}`: {reason}")]
    InvalidManifest { name: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no face found in record `{id}` with confidence >= {threshold}")]
    FaceNotFound { id: String, threshold: f32 },

    #[error("value {value} at index {index} is outside [-1, 1] beyond tolerance")]
    Range { index: usize, value: f32 },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("expansion failed for record `{id}`: {reason}")]
    Expansion { id: String, reason: String },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("model error: {0}")]
    Model(#[source] Box<dyn std::error::Error + Send + Sync>),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ::image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
