use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::netarch::{infer_shapes, ArchitectureSpec, LayerSpec};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    /// Index of the owning layer in the architecture.
    pub layer: usize,
    pub tensor: Tensor,
}

/// Weights and biases of every parameterized layer, in layer order with the
/// weight before the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub params: Vec<Param>,
}

/// `(weight shape, bias shape)` per parameterized layer, in layer order.
pub fn param_shapes(arch: &ArchitectureSpec) -> Result<Vec<(usize, [Vec<usize>; 2])>> {
    let trace = infer_shapes(arch)?;
    let mut out = Vec::new();
    for (i, layer) in arch.layers.iter().enumerate() {
        let input = trace.shape_after(i);
        let shapes = match *layer {
            LayerSpec::Conv { kh, kw, out_channels, .. } => {
                [alloc::vec![out_channels, input.channels, kh, kw], alloc::vec![out_channels]]
            }
            LayerSpec::FullyConnected { units, pieces } => {
                [alloc::vec![units * pieces, input.size()], alloc::vec![units * pieces]]
            }
            LayerSpec::SoftmaxHead { classes } => [alloc::vec![classes, input.size()], alloc::vec![classes]],
            _ => continue,
        };
        out.push((i, shapes));
    }
    Ok(out)
}

fn layer_tag(layer: &LayerSpec) -> &'static str {
    match layer {
        LayerSpec::Conv { .. } => "conv",
        LayerSpec::FullyConnected { .. } => "fc",
        _ => "softmax",
    }
}

/// Every scalar drawn independently from `U(-halfwidth, halfwidth)`, in
/// declaration order from one seeded stream.
pub fn init_params(arch: &ArchitectureSpec, halfwidth: Scalar, seed: u64) -> Result<ParameterSet> {
    let mut r = rng::seeded(seed, rng::stream::INIT, 0);
    let mut params = Vec::new();
    for (layer, [w, b]) in param_shapes(arch)? {
        let tag = layer_tag(&arch.layers[layer]);
        for (suffix, shape) in [("weight", w), ("bias", b)] {
            params.push(Param {
                name: alloc::format!("{layer}.{tag}.{suffix}"),
                layer,
                tensor: rng::uniform_tensor(&shape, halfwidth, &mut r)?,
            });
        }
    }
    Ok(ParameterSet { params })
}

impl ParameterSet {
    /// Wraps tensors in declaration order, checking them against `arch`.
    pub fn from_tensors(arch: &ArchitectureSpec, tensors: Vec<Tensor>) -> Result<Self> {
        let shapes = param_shapes(arch)?;
        if tensors.len() != 2 * shapes.len() {
            return Err(Error::Architecture(alloc::format!(
                "`{}` has {} parameter tensors, got {}",
                arch.name,
                2 * shapes.len(),
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut params = Vec::new();
        for (layer, pair) in shapes {
            let tag = layer_tag(&arch.layers[layer]);
            for (suffix, shape) in ["weight", "bias"].into_iter().zip(pair) {
                let tensor = it.next().ok_or_else(|| Error::Architecture("missing tensor".into()))?;
                if tensor.shape() != shape.as_slice() {
                    return Err(Error::mismatch("parameter set", tensor.shape(), &shape));
                }
                params.push(Param {
                    name: alloc::format!("{layer}.{tag}.{suffix}"),
                    layer,
                    tensor,
                });
            }
        }
        Ok(ParameterSet { params })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> u64 {
        self.params.iter().map(|p| p.tensor.len() as u64).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.params.iter().map(|p| &p.tensor)
    }

    /// Entry range of the parameters owned by layers in `layers`.
    pub fn entries_for_layers(&self, layers: Range<usize>) -> Range<usize> {
        let start = self.params.iter().position(|p| p.layer >= layers.start).unwrap_or(self.params.len());
        let end = self.params.iter().position(|p| p.layer >= layers.end).unwrap_or(self.params.len());
        start..end
    }

    /// Entry index of the weight of `layer`.
    pub fn weight_index(&self, layer: usize) -> Option<usize> {
        self.params.iter().position(|p| p.layer == layer)
    }

    /// Zero tensors with the same shapes, for gradient accumulation.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.tensor.zeros_like()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netarch::{build_paper_arch, count_params};

    #[test]
    fn scalar_count_matches_arch_count() {
        for name in ["fitnet1", "mnist-student", "desk-teacher", "desk-student", "aflw-fitnet1"] {
            let a = build_paper_arch(name).unwrap();
            let p = init_params(&a, 0.005, 1).unwrap();
            assert_eq!(p.scalar_count(), count_params(&a).unwrap(), "{name}");
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = build_paper_arch("desk-student").unwrap();
        let p = init_params(&a, 0.005, 7).unwrap();
        assert_eq!(p, init_params(&a, 0.005, 7).unwrap());
        assert_ne!(p, init_params(&a, 0.005, 8).unwrap());
        assert!(p.tensors().all(|t| t.data().iter().all(|v| v.abs() <= 0.005)));
        let wide = init_params(&a, 0.05, 7).unwrap();
        assert!(wide.tensors().any(|t| t.data().iter().any(|v| v.abs() > 0.005)));
        assert!(init_params(&a, 0.0, 7).is_err());
    }

    #[test]
    fn names_are_unique_and_ranges_work() {
        let a = build_paper_arch("desk-teacher").unwrap();
        let p = init_params(&a, 0.005, 1).unwrap();
        let mut names: Vec<&str> = p.params.iter().map(|p| p.name.as_str()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), p.len());
        assert!(p.get("0.conv.weight").is_some());
        let first_block = a.prefix_through_conv(1).unwrap();
        assert_eq!(p.entries_for_layers(0..first_block), 0..2);
        let rebuilt = ParameterSet::from_tensors(&a, p.tensors().cloned().collect()).unwrap();
        assert_eq!(rebuilt, p);
    }
}
