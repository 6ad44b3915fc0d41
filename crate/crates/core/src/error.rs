use std::path::PathBuf;

use mutabnet_autodiff::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("token {token:?} is not in the vocabulary")]
    OutOfVocabulary { token: String },

    #[error("malformed structure at token {index}: {reason}")]
    Structure { index: usize, reason: String },

    #[error("alignment mismatch: {expected} cell slots but {found} cells")]
    Alignment { expected: usize, found: usize },

    #[error("sequence of length {len} exceeds the limit of {max}")]
    TooLong { len: usize, max: usize },

    #[error("every target position is padding")]
    DegenerateBatch,

    #[error("loss component {component} is not finite")]
    NonFiniteLoss { component: String },

    #[error("gradient of parameter {param} is not finite")]
    NonFiniteGrad { param: String },

    #[error("html parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
