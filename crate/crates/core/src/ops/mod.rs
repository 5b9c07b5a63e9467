//! Layer kernels and the [`DiffOp`] wrapper that caches forward state for
//! the backward pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub mod activation;
pub mod conv;
pub mod dense;
pub mod maxout;
pub mod pool;
pub mod softmax;

pub use activation::{relu, sigmoid};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads};
pub use dense::fully_connected;
pub use maxout::maxout;
pub use pool::{global_maxpool, maxpool2d};
pub use softmax::{log_softmax_rows, softmax_rows};

/// Operation kind plus its static attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Conv2d { padded: bool },
    MaxPool2d { window: (usize, usize), overlap: (usize, usize) },
    GlobalMaxPool,
    Maxout { pieces: usize },
    FullyConnected,
    Relu,
    Sigmoid,
    Softmax,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::MaxPool2d { .. } => "maxpool2d",
            OpKind::GlobalMaxPool => "global_maxpool",
            OpKind::Maxout { .. } => "maxout",
            OpKind::FullyConnected => "fully_connected",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softmax => "softmax",
        }
    }

    /// Number of parameter tensors (weights, bias) the op consumes.
    pub fn param_arity(&self) -> usize {
        match self {
            OpKind::Conv2d { .. } | OpKind::FullyConnected => 2,
            _ => 0,
        }
    }

    /// Distance from the nearest point where the op is not differentiable,
    /// infinity for smooth ops.
    pub fn tie_gap(&self, input: &Tensor) -> Result<Scalar> {
        match *self {
            OpKind::MaxPool2d { window, overlap } => pool::min_tie_gap(input, window, overlap),
            OpKind::GlobalMaxPool => {
                let [_, _, h, w] = input.dims4("global_maxpool")?;
                pool::min_tie_gap(input, (h, w), (0, 0))
            }
            OpKind::Maxout { pieces } => maxout::min_tie_gap(input, pieces),
            OpKind::Relu => Ok(activation::relu_tie_gap(input)),
            _ => Ok(Scalar::INFINITY),
        }
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Conv(conv::ConvCache),
    Pool(pool::PoolCache),
    Maxout(maxout::MaxoutCache),
    Dense(dense::DenseCache),
    Relu(Tensor),
    Sigmoid(Tensor),
    Softmax(Tensor),
}

/// Gradients with respect to the op input and each parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OpGrads {
    pub input: Tensor,
    pub params: Vec<Tensor>,
}

/// A differentiable op that remembers what its backward pass needs.
#[derive(Debug, Clone)]
pub struct DiffOp {
    kind: OpKind,
    cache: Option<Cache>,
}

impl DiffOp {
    pub fn new(kind: OpKind) -> Self {
        DiffOp { kind, cache: None }
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    /// Drops cached forward state.
    pub fn clear(&mut self) {
        self.cache = None;
    }

    pub fn forward(&mut self, input: &Tensor, params: &[&Tensor]) -> Result<Tensor> {
        if params.len() != self.kind.param_arity() {
            return Err(Error::invalid(
                self.kind.name(),
                alloc::format!("expected {} parameter tensors, got {}", self.kind.param_arity(), params.len()),
            ));
        }
        let (out, cache) = match self.kind {
            OpKind::Conv2d { padded } => {
                let (o, c) = conv::forward_cached(input, params[0], params[1], padded)?;
                (o, Cache::Conv(c))
            }
            OpKind::MaxPool2d { window, overlap } => {
                let (o, c) = pool::maxpool_cached(input, window, overlap)?;
                (o, Cache::Pool(c))
            }
            OpKind::GlobalMaxPool => {
                let (o, c) = pool::global_maxpool_cached(input)?;
                (o, Cache::Pool(c))
            }
            OpKind::Maxout { pieces } => {
                let (o, c) = maxout::maxout_cached(input, pieces)?;
                (o, Cache::Maxout(c))
            }
            OpKind::FullyConnected => {
                let (o, c) = dense::dense_cached(input, params[0], params[1])?;
                (o, Cache::Dense(c))
            }
            OpKind::Relu => (activation::relu(input), Cache::Relu(input.clone())),
            OpKind::Sigmoid => {
                let o = activation::sigmoid(input);
                (o.clone(), Cache::Sigmoid(o))
            }
            OpKind::Softmax => {
                let o = softmax::softmax_rows(input, 1.0)?;
                (o.clone(), Cache::Softmax(o))
            }
        };
        self.cache = Some(cache);
        Ok(out)
    }

    /// Backward pass for the most recent forward call.
    pub fn backward(&self, grad_out: &Tensor) -> Result<OpGrads> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(Error::BackwardBeforeForward(self.kind.name()))?;
        let no_params = |input| OpGrads {
            input,
            params: vec![],
        };
        Ok(match cache {
            Cache::Conv(c) => {
                let g = conv::backward_cached(c, grad_out)?;
                OpGrads {
                    input: g.input,
                    params: vec![g.weights, g.bias],
                }
            }
            Cache::Dense(c) => {
                let g = dense::dense_backward(c, grad_out)?;
                OpGrads {
                    input: g.input,
                    params: vec![g.weights, g.bias],
                }
            }
            Cache::Pool(c) => no_params(pool::pool_backward(c, grad_out)?),
            Cache::Maxout(c) => no_params(maxout::maxout_backward(c, grad_out)?),
            Cache::Relu(x) => no_params(activation::relu_backward(x, grad_out)?),
            Cache::Sigmoid(y) => no_params(activation::sigmoid_backward(y, grad_out)?),
            Cache::Softmax(y) => no_params(softmax::softmax_backward(y, grad_out)?),
        })
    }
}
