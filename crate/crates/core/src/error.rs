//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or configuration problem detected while wiring tensors together.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Bad model or training configuration, caught at build time.
    #[error("invalid config: {0}")]
    Config(String),

    /// Autodiff misuse (non-scalar loss, reused tape, tensor from another tape...).
    #[error("autodiff: {0}")]
    Autodiff(String),

    /// Batch statistics cannot be formed (e.g. batch-norm over a single value).
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed tensor / checkpoint / manifest file.
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    /// Dataset contents violate the manifest contract.
    #[error("data error: {0}")]
    Data(String),

    /// Training aborted (non-finite loss and similar fatal conditions).
    #[error("training aborted at iteration {iter} (lr={lr}): {detail}")]
    Training { iter: usize, lr: f64, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn format(path: impl AsRef<std::path::Path>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.as_ref().display().to_string(), detail: detail.into() }
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }
}
