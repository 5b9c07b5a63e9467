use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::netarch::{BlockActivation, FeatureShape};
use crate::ops::{DiffOp, OpKind};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{hint_loss, LossOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressorKind {
    FullyConnected,
    Convolutional,
}

/// Kernel that maps guided spatial extents onto hint extents with an
/// unpadded convolution: `k_i = N_g,i - N_h,i + 1`.
pub fn regressor_kernel_shape(guided: (usize, usize), hint: (usize, usize)) -> Result<(usize, usize)> {
    if guided.0 < hint.0 || guided.1 < hint.1 || hint.0 == 0 || hint.1 == 0 {
        return Err(Error::GuidedSmallerThanHint { guided, hint });
    }
    Ok((guided.0 - hint.0 + 1, guided.1 - hint.1 + 1))
}

/// Weight count of a regressor, biases excluded. `n_h` and `n_g` are spatial
/// extents, `o_h` and `o_g` channel counts; `kernel` is ignored for the
/// fully-connected kind.
pub fn regressor_param_count(
    kind: RegressorKind,
    n_h: (usize, usize),
    o_h: usize,
    n_g: (usize, usize),
    o_g: usize,
    kernel: (usize, usize),
) -> u64 {
    let p = |xs: &[usize]| xs.iter().map(|&x| x as u64).product::<u64>();
    match kind {
        RegressorKind::FullyConnected => p(&[n_h.0, n_h.1, o_h, n_g.0, n_g.1, o_g]),
        RegressorKind::Convolutional => p(&[kernel.0, kernel.1, o_h, o_g]),
    }
}

/// Convolutional regressor followed by the hint layer's nonlinearity.
#[derive(Debug, Clone)]
pub struct Regressor {
    pub kind: RegressorKind,
    pub kernel: (usize, usize),
    pub activation: BlockActivation,
    pub guided_shape: FeatureShape,
    pub hint_shape: FeatureShape,
    /// `[O_h * pieces, O_g, k1, k2]`.
    pub weights: Tensor,
    pub bias: Tensor,
    conv: DiffOp,
    act: Option<DiffOp>,
}

/// Hint loss value and gradients for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct HintOutput {
    pub value: Scalar,
    /// Gradient with respect to the student guided-layer output.
    pub guided: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

fn activation_op(a: BlockActivation) -> Option<DiffOp> {
    match a {
        BlockActivation::Maxout(p) => Some(DiffOp::new(OpKind::Maxout { pieces: p })),
        BlockActivation::Relu => Some(DiffOp::new(OpKind::Relu)),
        BlockActivation::Sigmoid => Some(DiffOp::new(OpKind::Sigmoid)),
        BlockActivation::Identity => None,
    }
}

/// Builds a convolutional regressor from guided shape to hint shape with
/// weights drawn from `U(-halfwidth, halfwidth)`.
pub fn build_regressor(
    hint_shape: FeatureShape,
    guided_shape: FeatureShape,
    activation: BlockActivation,
    halfwidth: Scalar,
    seed: u64,
) -> Result<Regressor> {
    let kernel = regressor_kernel_shape(guided_shape.spatial(), hint_shape.spatial())?;
    let pieces = match activation {
        BlockActivation::Maxout(p) => p,
        _ => 1,
    };
    let out = hint_shape.channels * pieces;
    let mut r = rng::seeded(seed, rng::stream::REGRESSOR_INIT, 0);
    let weights = rng::uniform_tensor(&[out, guided_shape.channels, kernel.0, kernel.1], halfwidth, &mut r)?;
    let bias = rng::uniform_tensor(&[out], halfwidth, &mut r)?;
    let mut reg = Regressor {
        kind: RegressorKind::Convolutional,
        kernel,
        activation,
        guided_shape,
        hint_shape,
        weights,
        bias,
        conv: DiffOp::new(OpKind::Conv2d { padded: false }),
        act: activation_op(activation),
    };
    let probe = reg.forward(&Tensor::zeros(&guided_shape.batched(1))?)?;
    if probe.shape() != hint_shape.batched(1) {
        return Err(Error::invalid(
            "build_regressor",
            alloc::format!(
                "regressor output {:?} does not match hint {:?}",
                probe.shape(),
                hint_shape.batched(1)
            ),
        ));
    }
    reg.clear();
    Ok(reg)
}

impl Regressor {
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&mut self, guided: &Tensor) -> Result<Tensor> {
        let z = self.conv.forward(guided, &[&self.weights, &self.bias])?;
        match &mut self.act {
            Some(a) => a.forward(&z, &[]),
            None => Ok(z),
        }
    }

    /// Gradients `(guided, weights, bias)` for the last forward call.
    pub fn backward(&self, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let g = match &self.act {
            Some(a) => a.backward(grad_out)?.input,
            None => grad_out.clone(),
        };
        let mut og = self.conv.backward(&g)?;
        let bias = og.params.pop().ok_or(Error::BackwardBeforeForward("regressor"))?;
        let weights = og.params.pop().ok_or(Error::BackwardBeforeForward("regressor"))?;
        Ok((og.input, weights, bias))
    }

    /// Hint loss of `hint` against the regressed `guided`, with gradients.
    pub fn hint_step(&mut self, hint: &Tensor, guided: &Tensor) -> Result<HintOutput> {
        let regressed = self.forward(guided)?;
        let LossOutput { value, grad } = hint_loss(hint, &regressed)?;
        let (guided, weights, bias) = self.backward(&grad)?;
        Ok(HintOutput {
            value,
            guided,
            weights,
            bias,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.weights, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weights, &mut self.bias]
    }

    pub fn clear(&mut self) {
        self.conv.clear();
        if let Some(a) = &mut self.act {
            a.clear();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_rule() {
        assert_eq!(regressor_kernel_shape((8, 8), (6, 6)).unwrap(), (3, 3));
        assert_eq!(regressor_kernel_shape((5, 7), (5, 7)).unwrap(), (1, 1));
        assert!(matches!(
            regressor_kernel_shape((4, 4), (8, 8)),
            Err(Error::GuidedSmallerThanHint { .. })
        ));
    }

    #[test]
    fn param_counts() {
        let fc = regressor_param_count(RegressorKind::FullyConnected, (4, 4), 3, (5, 5), 2, (0, 0));
        assert_eq!(fc, 2400);
        let conv = regressor_param_count(RegressorKind::Convolutional, (4, 4), 3, (5, 5), 2, (3, 3));
        assert_eq!(conv, 54);
    }

    #[test]
    fn maxout_hint_regressor() {
        let r = build_regressor(
            FeatureShape::new(64, 6, 6),
            FeatureShape::new(32, 8, 8),
            BlockActivation::Maxout(2),
            0.005,
            1,
        )
        .unwrap();
        assert_eq!(r.kernel, (3, 3));
        assert_eq!(r.weights.shape(), &[128, 32, 3, 3]);
        assert!(r.weights.data().iter().all(|v| v.abs() < 0.005));
    }

    #[test]
    fn relu_equal_spatial_is_pointwise() {
        let mut r = build_regressor(
            FeatureShape::new(4, 5, 5),
            FeatureShape::new(2, 5, 5),
            BlockActivation::Relu,
            0.05,
            1,
        )
        .unwrap();
        assert_eq!(r.kernel, (1, 1));
        let out = r.forward(&Tensor::full(&[3, 2, 5, 5], 1.0).unwrap()).unwrap();
        assert_eq!(out.shape(), &[3, 4, 5, 5]);
        assert!(out.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn incompatible_shapes_fail() {
        let e = build_regressor(
            FeatureShape::new(4, 6, 6),
            FeatureShape::new(2, 5, 5),
            BlockActivation::Relu,
            0.05,
            1,
        );
        assert!(e.is_err());
        assert!(build_regressor(
            FeatureShape::new(3, 2, 2),
            FeatureShape::new(2, 3, 3),
            BlockActivation::Maxout(2),
            0.05,
            1
        )
        .is_ok());
    }

    #[test]
    fn backward_needs_forward() {
        let r = build_regressor(
            FeatureShape::new(1, 1, 1),
            FeatureShape::new(1, 2, 2),
            BlockActivation::Identity,
            0.1,
            0,
        )
        .unwrap();
        assert!(r.backward(&Tensor::zeros(&[1, 1, 1, 1]).unwrap()).is_err());
    }
}
