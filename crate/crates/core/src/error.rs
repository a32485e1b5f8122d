use std::path::PathBuf;

use advlab_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },
    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("non-finite {what} at step {step}{}", last_good.as_ref().map(|p| format!(" (last good checkpoint: {})", p.display())).unwrap_or_default())]
    NonFinite {
        what: &'static str,
        step: usize,
        last_good: Option<PathBuf>,
    },
    #[error("input height and width must be multiples of {multiple}; got {height}x{width} (pad to {padded_h}x{padded_w})")]
    InputSize {
        multiple: usize,
        height: usize,
        width: usize,
        padded_h: usize,
        padded_w: usize,
    },
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) fn invalid(what: &'static str, msg: impl Into<String>) -> CoreError {
    CoreError::Invalid {
        what,
        msg: msg.into(),
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CoreError {
    let path = path.into();
    move |source| CoreError::Io { path, source }
}
