//! Affine map over the flattened per-example features: `[B, ...] -> [B, U]`.

use alloc::vec;

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Tensor,
    weights: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

fn check(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    let (b, d) = input.batch_rows();
    let &[u, wd] = weights.shape() else {
        return Err(Error::invalid(
            "fully_connected",
            alloc::format!("weights must be [U, D], got {:?}", weights.shape()),
        ));
    };
    if wd != d {
        return Err(Error::mismatch("fully_connected (input vs weights)", input.shape(), weights.shape()));
    }
    if bias.shape() != [u] {
        return Err(Error::mismatch("fully_connected (bias)", bias.shape(), &[u]));
    }
    Ok((b, d, u))
}

pub(crate) fn dense_cached(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(Tensor, DenseCache)> {
    let (b, d, u) = check(input, weights, bias)?;
    let mut out = vec![0.0; b * u];
    for row in out.chunks_exact_mut(u) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        1.0,
        MatRef::row_major(input.data(), b, d),
        MatRef::transposed(weights.data(), u, d),
        1.0,
        &mut out,
    );
    Ok((
        Tensor::new(&[b, u], out)?,
        DenseCache {
            input: input.clone(),
            weights: weights.clone(),
        },
    ))
}

pub(crate) fn dense_backward(cache: &DenseCache, grad_out: &Tensor) -> Result<DenseGrads> {
    let (b, d) = cache.input.batch_rows();
    let u = cache.weights.shape()[0];
    if grad_out.shape() != [b, u] {
        return Err(Error::mismatch("fully_connected backward", grad_out.shape(), &[b, u]));
    }
    let mut gi = vec![0.0; b * d];
    gemm(
        1.0,
        MatRef::row_major(grad_out.data(), b, u),
        MatRef::row_major(cache.weights.data(), u, d),
        0.0,
        &mut gi,
    );
    let mut gw = vec![0.0; u * d];
    gemm(
        1.0,
        MatRef::transposed(grad_out.data(), b, u),
        MatRef::row_major(cache.input.data(), b, d),
        0.0,
        &mut gw,
    );
    let mut gb = vec![0.0; u];
    for row in grad_out.data().chunks_exact(u) {
        for (acc, g) in gb.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(cache.input.shape(), gi)?,
        weights: Tensor::new(&[u, d], gw)?,
        bias: Tensor::new(&[u], gb)?,
    })
}

/// `input [B, D]` (or any `[B, ...]`), `weights [U, D]`, `bias [U]` to `[B, U]`.
pub fn fully_connected(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    dense_cached(input, weights, bias).map(|(t, _)| t)
}
