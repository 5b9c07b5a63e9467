//! Architecture descriptions.
//!
//! An [`ArchitectureSpec`] is an input shape plus an ordered list of
//! [`LayerSpec`]s. [`infer_shapes`] walks the list, validates every layer
//! against its input and records output shapes together with parameter and
//! multiplication counts. [`zoo`] holds builders for the published networks.
//!
//! Maxout convolutions are written as a `Conv` whose `out_channels` already
//! includes every piece, followed by `Maxout { pieces }`. A fully-connected
//! layer with `pieces > 1` is a maxout layer in one entry.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use crate::error::{Error, Result};

mod compare;
mod trace;
pub mod zoo;

pub use compare::{speedup_and_compression, CompressionReport};
pub use trace::{count_mults, count_params, infer_shapes, LayerShapeTrace, LayerTrace};
pub use zoo::{build_paper_arch, PAPER_ARCHITECTURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    Conv {
        kh: usize,
        kw: usize,
        out_channels: usize,
        padded: bool,
    },
    MaxPool {
        wh: usize,
        ww: usize,
        oh: usize,
        ow: usize,
    },
    GlobalMaxPool,
    Maxout {
        pieces: usize,
    },
    FullyConnected {
        units: usize,
        pieces: usize,
    },
    Relu,
    Sigmoid,
    SoftmaxHead {
        classes: usize,
    },
}

impl LayerSpec {
    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. })
    }

    /// Conv, fully-connected and softmax head layers carry weights and biases.
    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv { .. } | LayerSpec::FullyConnected { .. } | LayerSpec::SoftmaxHead { .. }
        )
    }

    fn starts_block(&self) -> bool {
        self.has_params()
    }
}

/// Text form used by the architecture file format.
impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv {
                kh,
                kw,
                out_channels,
                padded,
            } => {
                write!(f, "conv {kh}x{kw}x{out_channels}")?;
                if padded {
                    f.write_str(" pad")?;
                }
                Ok(())
            }
            LayerSpec::MaxPool { wh, ww, oh, ow } => write!(f, "pool {wh}x{ww} overlap {oh}x{ow}"),
            LayerSpec::GlobalMaxPool => f.write_str("gpool"),
            LayerSpec::Maxout { pieces } => write!(f, "maxout {pieces}"),
            LayerSpec::FullyConnected { units, pieces } => {
                write!(f, "fc {units}")?;
                if pieces != 1 {
                    write!(f, " pieces {pieces}")?;
                }
                Ok(())
            }
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::Sigmoid => f.write_str("sigmoid"),
            LayerSpec::SoftmaxHead { classes } => write!(f, "softmax {classes}"),
        }
    }
}

/// `(channels, height, width)` of one example's feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        FeatureShape {
            channels,
            height,
            width,
        }
    }

    pub fn size(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// The `[B, C, H, W]` shape for a batch of `batch` examples.
    pub fn batched(&self, batch: usize) -> [usize; 4] {
        [batch, self.channels, self.height, self.width]
    }
}

impl fmt::Display for FeatureShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Student guided layer trained to predict a teacher hint layer. Both are
/// 1-based convolutional layer numbers, as in "hint: 11 <- 2".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HintPair {
    pub guided: usize,
    pub hint: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub name: String,
    pub input: FeatureShape,
    pub layers: Vec<LayerSpec>,
    /// The hint/guided pair a student architecture declares.
    pub hint: Option<HintPair>,
}

/// Nonlinearity applied inside a convolutional block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockActivation {
    Maxout(usize),
    Relu,
    Sigmoid,
    Identity,
}

impl ArchitectureSpec {
    pub fn new(name: impl Into<String>, input: FeatureShape, layers: Vec<LayerSpec>) -> Self {
        ArchitectureSpec {
            name: name.into(),
            input,
            layers,
            hint: None,
        }
    }

    pub fn with_hint(mut self, guided: usize, hint: usize) -> Self {
        self.hint = Some(HintPair { guided, hint });
        self
    }

    /// Same layers on a different input shape. Shape inference may fail for
    /// inputs the layer stack cannot handle.
    pub fn with_input(mut self, input: FeatureShape) -> Self {
        self.input = input;
        self
    }

    pub fn conv_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_conv()).count()
    }

    /// Layer count as the tables report it: convolutional, fully-connected
    /// and output layers.
    pub fn depth(&self) -> usize {
        self.layers.iter().filter(|l| l.has_params()).count()
    }

    /// Output class count of the head: `classes` for softmax, 2 for a
    /// sigmoid unit (treated as a two-way decision).
    pub fn class_count(&self) -> Result<usize> {
        match self.layers.last() {
            Some(LayerSpec::SoftmaxHead { classes }) => Ok(*classes),
            Some(LayerSpec::Sigmoid) => Ok(2),
            _ => Err(Error::Architecture(alloc::format!("`{}` has no output head", self.name))),
        }
    }

    pub fn has_sigmoid_head(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec::Sigmoid))
    }

    fn conv_position(&self, conv: usize) -> Result<usize> {
        if conv == 0 {
            return Err(Error::Architecture(String::from("convolutional layers are numbered from 1")));
        }
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_conv())
            .nth(conv - 1)
            .map(|(i, _)| i)
            .ok_or_else(|| {
                Error::Architecture(alloc::format!(
                    "`{}` has {} convolutional layers, index {conv} is out of range",
                    self.name,
                    self.conv_count()
                ))
            })
    }

    /// Layer range of convolutional block `conv` (1-based): the convolution
    /// itself plus its nonlinearity and any pooling up to the next layer with
    /// parameters.
    pub fn conv_block(&self, conv: usize) -> Result<Range<usize>> {
        let start = self.conv_position(conv)?;
        let end = self.layers[start + 1..]
            .iter()
            .position(LayerSpec::starts_block)
            .map_or(self.layers.len(), |p| start + 1 + p);
        Ok(start..end)
    }

    /// Number of leading layers that produce the output of block `conv`.
    pub fn prefix_through_conv(&self, conv: usize) -> Result<usize> {
        self.conv_block(conv).map(|r| r.end)
    }

    pub fn block_activation(&self, conv: usize) -> Result<BlockActivation> {
        let range = self.conv_block(conv)?;
        Ok(self.layers[range]
            .iter()
            .find_map(|l| match *l {
                LayerSpec::Maxout { pieces } => Some(BlockActivation::Maxout(pieces)),
                LayerSpec::Relu => Some(BlockActivation::Relu),
                LayerSpec::Sigmoid => Some(BlockActivation::Sigmoid),
                _ => None,
            })
            .unwrap_or(BlockActivation::Identity))
    }
}
