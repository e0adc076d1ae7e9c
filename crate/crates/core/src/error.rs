use std::path::PathBuf;

use thiserror::Error;

use crate::guidance::GuidanceTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure reported by a pluggable backend (segmenter, detector, diffusion
/// model, perceptual network, caption model, edit model).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct BackendError(pub String);

impl BackendError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("image is {width}x{height}, needs at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("segmentation of `{label}` produced an {} mask", if *.all_true { "all-true" } else { "all-false" })]
    SegmentationEmpty { label: String, all_true: bool },

    #[error("backend failure on `{context}`: {source}")]
    Backend {
        context: String,
        #[source]
        source: BackendError,
    },

    #[error("detection loss is not finite (total={total}, cls={classification}, reg={bbox_regression})")]
    NonFiniteLoss {
        total: f64,
        classification: f64,
        bbox_regression: f64,
    },

    #[error("guidance aborted at step {step}: non-finite detection loss")]
    GuidanceAborted { step: usize, trace: Box<GuidanceTrace> },

    #[error("gradient contains non-finite values")]
    NonFiniteGradient,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("inconsistent evidence label for `{image_id}`: {reason}")]
    InconsistentLabel { image_id: String, reason: String },

    #[error("join failure: {0}")]
    JoinFailure(String),

    #[error("backend does not expose a feature layer for Grad-CAM")]
    FeatureUnavailable,

    #[error("caption unavailable for `{image_id}` after {attempts} attempts: {last_error}")]
    CaptionUnavailable {
        image_id: String,
        attempts: usize,
        last_error: BackendError,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("seed gate failed: {0}")]
    SeedGateFailed(String),

    #[error("missing stage: run `{0}` first")]
    MissingStage(&'static str),

    #[error("run has no usable candidates")]
    EmptyRun,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    ImageCodec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn backend(context: impl Into<String>, source: BackendError) -> Self {
        Error::Backend {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
