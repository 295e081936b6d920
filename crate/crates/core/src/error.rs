use crate::tensor::Dims;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Dims,
        right: Dims,
    },

    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error for key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite value in tensor `{0}`")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape { op, msg: msg.into() }
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
