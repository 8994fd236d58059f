use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Core(#[from] fer_core::Error),

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("weights: {0}")]
    Weights(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite {what} loss at epoch {epoch}, step {step}: {value}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        step: usize,
        value: f32,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    SafeTensors { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<Error> for fer_core::Error {
    fn from(e: Error) -> Self {
        match e {
            Error::Core(inner) => inner,
            other => fer_core::Error::Model(Box::new(other)),
        }
    }
}
