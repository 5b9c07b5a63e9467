use alloc::vec::Vec;
use core::ops::Range;

use super::params::ParameterSet;
use crate::error::{Error, Result};
use crate::netarch::{infer_shapes, ArchitectureSpec, LayerShapeTrace, LayerSpec};
use crate::ops::{DiffOp, OpKind};
use crate::tensor::Tensor;

struct Step {
    layer: usize,
    op: DiffOp,
    /// Entry index of the weight in the parameter set.
    param: Option<usize>,
}

/// Executes an architecture layer by layer, caching what the backward pass
/// needs.
///
/// The network produces logits. A softmax head contributes its affine map; a
/// final sigmoid unit `z` is reported as two-class logits `[0, z]`, whose
/// softmax is `[1 - sigmoid(z), sigmoid(z)]`.
pub struct Network {
    arch: ArchitectureSpec,
    trace: LayerShapeTrace,
    steps: Vec<Step>,
    logit_layers: usize,
}

impl Network {
    pub fn new(arch: &ArchitectureSpec) -> Result<Self> {
        let trace = infer_shapes(arch)?;
        let mut steps = Vec::new();
        let mut flat = false;
        let mut entry = 0;
        for (i, layer) in arch.layers.iter().enumerate() {
            let spatial = matches!(
                layer,
                LayerSpec::Conv { .. } | LayerSpec::MaxPool { .. } | LayerSpec::GlobalMaxPool
            );
            if spatial && flat {
                return Err(Error::Layer {
                    index: i,
                    layer: alloc::format!("{layer}"),
                    msg: "spatial layers cannot follow a fully-connected layer".into(),
                });
            }
            let mut push = |kind, param| steps.push(Step { layer: i, op: DiffOp::new(kind), param });
            match *layer {
                LayerSpec::Conv { padded, .. } => {
                    push(OpKind::Conv2d { padded }, Some(entry));
                    entry += 2;
                }
                LayerSpec::MaxPool { wh, ww, oh, ow } => push(
                    OpKind::MaxPool2d {
                        window: (wh, ww),
                        overlap: (oh, ow),
                    },
                    None,
                ),
                LayerSpec::GlobalMaxPool => push(OpKind::GlobalMaxPool, None),
                LayerSpec::Maxout { pieces } => push(OpKind::Maxout { pieces }, None),
                LayerSpec::FullyConnected { pieces, .. } => {
                    flat = true;
                    push(OpKind::FullyConnected, Some(entry));
                    entry += 2;
                    if pieces > 1 {
                        push(OpKind::Maxout { pieces }, None);
                    }
                }
                LayerSpec::Relu => push(OpKind::Relu, None),
                LayerSpec::Sigmoid => push(OpKind::Sigmoid, None),
                LayerSpec::SoftmaxHead { .. } => {
                    push(OpKind::FullyConnected, Some(entry));
                    entry += 2;
                }
            }
        }
        let logit_layers = arch.layers.len() - usize::from(arch.has_sigmoid_head());
        Ok(Network {
            arch: arch.clone(),
            trace,
            steps,
            logit_layers,
        })
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn trace(&self) -> &LayerShapeTrace {
        &self.trace
    }

    fn check_params(&self, params: &ParameterSet) -> Result<()> {
        let needed = self.steps.iter().filter(|s| s.param.is_some()).count() * 2;
        if params.len() != needed {
            return Err(Error::Architecture(alloc::format!(
                "`{}` needs {needed} parameter tensors, got {}",
                self.arch.name,
                params.len()
            )));
        }
        Ok(())
    }

    /// Runs layers `layers` on `input`, which must be the output of the
    /// layers before `layers.start`.
    pub fn forward(&mut self, params: &ParameterSet, input: &Tensor, layers: Range<usize>) -> Result<Tensor> {
        self.check_params(params)?;
        let expected = self.trace.shape_after(layers.start);
        let batch = input.shape()[0];
        if input.len() != batch * expected.size() {
            return Err(Error::invalid(
                "network forward",
                alloc::format!("layer {} expects {expected} per example, got {:?}", layers.start, input.shape()),
            ));
        }
        let mut x = input.clone().reshape(&expected.batched(batch))?;
        for step in self.steps.iter_mut().filter(|s| layers.contains(&s.layer)) {
            x = match step.param {
                Some(p) => step.op.forward(&x, &[&params.params[p].tensor, &params.params[p + 1].tensor])?,
                None => step.op.forward(&x, &[])?,
            };
        }
        Ok(x)
    }

    /// Backward through `layers` for the latest forward call over the same
    /// range. Parameter gradients are stored into `grads` (indexed like the
    /// parameter set); the gradient with respect to the range input is
    /// returned.
    pub fn backward(&self, grad_out: &Tensor, layers: Range<usize>, grads: &mut [Tensor]) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for step in self.steps.iter().rev().filter(|s| layers.contains(&s.layer)) {
            let og = step.op.backward(&g)?;
            if let Some(p) = step.param {
                let mut it = og.params.into_iter();
                if let (Some(w), Some(b)) = (it.next(), it.next()) {
                    grads[p] = w;
                    grads[p + 1] = b;
                }
            }
            g = og.input;
        }
        Ok(g)
    }

    /// `[B, K]` logits.
    pub fn logits(&mut self, params: &ParameterSet, input: &Tensor) -> Result<Tensor> {
        let out = self.forward(params, input, 0..self.logit_layers)?;
        if self.arch.has_sigmoid_head() {
            let b = out.shape()[0];
            let mut two = Vec::with_capacity(2 * b);
            for &z in out.data() {
                two.push(0.0);
                two.push(z);
            }
            Tensor::new(&[b, 2], two)
        } else {
            Ok(out)
        }
    }

    /// Backward from a gradient with respect to [`Network::logits`].
    pub fn logits_backward(&self, grad: &Tensor, grads: &mut [Tensor]) -> Result<Tensor> {
        let g = if self.arch.has_sigmoid_head() {
            let b = grad.shape()[0];
            Tensor::new(&[b, 1], grad.data().chunks_exact(2).map(|r| r[1]).collect())?
        } else {
            grad.clone()
        };
        self.backward(&g, 0..self.logit_layers, grads)
    }

    /// Drops every cached activation.
    pub fn clear(&mut self) {
        for s in &mut self.steps {
            s.op.clear();
        }
    }
}
