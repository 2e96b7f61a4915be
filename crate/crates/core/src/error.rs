use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layer {layer}: {msg}")]
    Layer { layer: String, msg: String },

    #[error("autograd: {0}")]
    Autograd(String),

    #[error("missing gradient for parameter {0}")]
    MissingGradient(String),

    #[error("non-finite loss at iteration {iter} (lr={lr})")]
    NonFiniteLoss { iter: usize, lr: f64 },

    #[error("{}: {msg}", path.display())]
    Data { path: PathBuf, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("weight file: {0}")]
    Weights(#[from] WeightError),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn data(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Data { path: path.into(), msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Prefix a shape or argument error with the layer that raised it.
    pub(crate) fn in_layer(self, layer: &str) -> Self {
        match self {
            Error::Layer { .. } => self,
            other => Error::Layer { layer: layer.to_string(), msg: other.to_string() },
        }
    }
}

/// Failures while decoding or applying a weight file.
#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("bad magic {0:?}, expected \"FSCN\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: {0}")]
    Truncated(&'static str),
    #[error("trailing bytes after last tensor ({0} bytes)")]
    TrailingBytes(usize),
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("duplicate tensor name {0}")]
    DuplicateName(String),
    #[error("unknown tensor {0}")]
    UnknownTensor(String),
    #[error("tensor {name}: shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("tensor {0} missing from file")]
    MissingTensor(String),
}

pub(crate) fn check_same_shape(what: &str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}
