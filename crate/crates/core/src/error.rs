use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid tensor: shape {shape:?} does not describe {len} elements")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },

    #[error("invalid tensor shape {0:?}: every extent must be at least 1")]
    ZeroExtent(Vec<usize>),

    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{0}: backward called before forward")]
    BackwardBeforeForward(&'static str),

    #[error("{0}: non-finite value encountered")]
    NonFinite(&'static str),

    #[error("layer {index} ({layer}): {msg}")]
    Layer {
        index: usize,
        layer: String,
        msg: String,
    },

    #[error("architecture: {0}")]
    Architecture(String),

    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),

    #[error("regressor: guided spatial size {guided:?} is smaller than hint spatial size {hint:?}")]
    GuidedSmallerThanHint {
        guided: (usize, usize),
        hint: (usize, usize),
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("training diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: &'static str },

    #[error("gradient check requires a 64-bit float build")]
    GradCheckPrecision,
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
