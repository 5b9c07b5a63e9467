use alloc::string::ToString;
use alloc::vec::Vec;

use super::{ArchitectureSpec, FeatureShape, LayerSpec};
use crate::error::{Error, Result};
use crate::ops::conv::output_extent;
use crate::ops::pool::pool_extent;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerTrace {
    pub output: FeatureShape,
    pub params: u64,
    /// Multiplications for one example's forward pass.
    pub mults: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShapeTrace {
    pub input: FeatureShape,
    pub layers: Vec<LayerTrace>,
    pub total_params: u64,
    pub total_mults: u64,
}

impl LayerShapeTrace {
    /// Shape after the first `count` layers (the input when `count == 0`).
    pub fn shape_after(&self, count: usize) -> FeatureShape {
        if count == 0 {
            self.input
        } else {
            self.layers[count - 1].output
        }
    }

    pub fn output(&self) -> FeatureShape {
        self.shape_after(self.layers.len())
    }
}

fn layer_err(index: usize, layer: &LayerSpec, input: FeatureShape, msg: impl core::fmt::Display) -> Error {
    Error::Layer {
        index,
        layer: layer.to_string(),
        msg: alloc::format!("input {input}: {msg}"),
    }
}

fn step(index: usize, layer: &LayerSpec, input: FeatureShape, is_last: bool) -> Result<LayerTrace> {
    let err = |msg: &str| layer_err(index, layer, input, msg);
    let c = input.channels as u64;
    let d = input.size() as u64;
    let same = |params, mults| LayerTrace { output: input, params, mults };
    Ok(match *layer {
        LayerSpec::Conv {
            kh,
            kw,
            out_channels,
            padded,
        } => {
            if kh == 0 || kw == 0 || out_channels == 0 {
                return Err(err("kernel extents and channel count must be at least 1"));
            }
            let (Some(h), Some(w)) = (
                output_extent(input.height, kh, padded),
                output_extent(input.width, kw, padded),
            ) else {
                return Err(err("kernel does not fit the input"));
            };
            let k = (kh * kw) as u64 * c * out_channels as u64;
            LayerTrace {
                output: FeatureShape::new(out_channels, h, w),
                params: k + out_channels as u64,
                mults: (h * w) as u64 * k,
            }
        }
        LayerSpec::MaxPool { wh, ww, oh, ow } => {
            if wh == 0 || ww == 0 {
                return Err(err("pool window must be at least 1"));
            }
            if oh >= wh || ow >= ww {
                return Err(err("overlap must be smaller than the window"));
            }
            let (Some(h), Some(w)) = (pool_extent(input.height, wh, oh), pool_extent(input.width, ww, ow)) else {
                return Err(err("pool window does not fit the input"));
            };
            LayerTrace {
                output: FeatureShape::new(input.channels, h, w),
                params: 0,
                mults: 0,
            }
        }
        LayerSpec::GlobalMaxPool => LayerTrace {
            output: FeatureShape::new(input.channels, 1, 1),
            params: 0,
            mults: 0,
        },
        LayerSpec::Maxout { pieces } => {
            if pieces == 0 || input.channels % pieces != 0 {
                return Err(err("channel count is not divisible by the piece count"));
            }
            LayerTrace {
                output: FeatureShape::new(input.channels / pieces, input.height, input.width),
                params: 0,
                mults: 0,
            }
        }
        LayerSpec::FullyConnected { units, pieces } => {
            if units == 0 || pieces == 0 {
                return Err(err("units and pieces must be at least 1"));
            }
            let u = (units * pieces) as u64;
            LayerTrace {
                output: FeatureShape::new(units, 1, 1),
                params: d * u + u,
                mults: d * u,
            }
        }
        LayerSpec::Relu => same(0, 0),
        LayerSpec::Sigmoid => {
            if is_last && input.size() != 1 {
                return Err(err("a sigmoid output layer needs exactly one input unit"));
            }
            same(0, 0)
        }
        LayerSpec::SoftmaxHead { classes } => {
            if !is_last {
                return Err(err("the softmax head must be the last layer"));
            }
            if classes < 2 {
                return Err(err("a softmax head needs at least two classes"));
            }
            let k = classes as u64;
            LayerTrace {
                output: FeatureShape::new(classes, 1, 1),
                params: d * k + k,
                mults: d * k,
            }
        }
    })
}

/// Validates `arch` and traces shapes, parameter counts and multiplication
/// counts layer by layer.
pub fn infer_shapes(arch: &ArchitectureSpec) -> Result<LayerShapeTrace> {
    let input = arch.input;
    if input.size() == 0 {
        return Err(Error::Architecture(alloc::format!(
            "`{}`: input extents must be at least 1, got {input}",
            arch.name
        )));
    }
    match arch.layers.last() {
        Some(LayerSpec::SoftmaxHead { .. } | LayerSpec::Sigmoid) => {}
        _ => {
            return Err(Error::Architecture(alloc::format!(
                "`{}` must end with a softmax or sigmoid output layer",
                arch.name
            )))
        }
    }
    let n = arch.layers.len();
    let mut shape = input;
    let mut layers = Vec::with_capacity(n);
    for (i, layer) in arch.layers.iter().enumerate() {
        let t = step(i, layer, shape, i + 1 == n)?;
        shape = t.output;
        layers.push(t);
    }
    Ok(LayerShapeTrace {
        input,
        total_params: layers.iter().map(|l| l.params).sum(),
        total_mults: layers.iter().map(|l| l.mults).sum(),
        layers,
    })
}

pub fn count_params(arch: &ArchitectureSpec) -> Result<u64> {
    infer_shapes(arch).map(|t| t.total_params)
}

pub fn count_mults(arch: &ArchitectureSpec) -> Result<u64> {
    infer_shapes(arch).map(|t| t.total_mults)
}
