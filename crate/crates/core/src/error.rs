use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HcmError {
    #[error("input spatial size {height}x{width} is not divisible by 32")]
    InputNotDivisible { height: usize, width: usize },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("prediction pyramid is missing level p{0}")]
    MissingLevel(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing required configuration key `{0}`")]
    MissingKey(&'static str),

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite loss {loss} at step {step} (epoch {epoch}, batch {batch})")]
    NonFiniteLoss {
        loss: f64,
        step: usize,
        epoch: usize,
        batch: usize,
    },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HcmError {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl std::fmt::Debug,
        actual: impl std::fmt::Debug,
    ) -> Self {
        HcmError::Shape {
            context,
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}

pub type Result<T, E = HcmError> = std::result::Result<T, E>;
