use crate::error::{Error, Result};
use crate::scalar::{exp, Scalar};
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Derivative at exactly zero is taken as zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::mismatch("relu backward", grad_out.shape(), input.shape()));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape(), data)
}

#[inline]
pub fn sigmoid_scalar(x: Scalar) -> Scalar {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(sigmoid_scalar)
}

/// Backward from the cached forward output `y`: `g * y * (1 - y)`.
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if output.shape() != grad_out.shape() {
        return Err(Error::mismatch("sigmoid backward", grad_out.shape(), output.shape()));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * y * (1.0 - y))
        .collect();
    Tensor::new(output.shape(), data)
}

/// Smallest `|x|`, the distance to relu's kink.
pub fn relu_tie_gap(input: &Tensor) -> Scalar {
    input.data().iter().fold(Scalar::INFINITY, |m, v| m.min(v.abs()))
}
