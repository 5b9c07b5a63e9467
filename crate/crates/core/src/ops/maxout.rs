//! Maxout over contiguous channel groups: output channel `i` is the
//! elementwise maximum of input channels `[i*g, (i+1)*g)`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct MaxoutCache {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    argmax: Vec<usize>,
}

struct Layout {
    batch: usize,
    out_channels: usize,
    inner: usize,
}

fn layout(input: &Tensor, pieces: usize) -> Result<Layout> {
    let shape = input.shape();
    if shape.len() < 2 {
        return Err(Error::invalid(
            "maxout",
            alloc::format!("expected at least [B, C], got {shape:?}"),
        ));
    }
    if pieces == 0 || shape[1] % pieces != 0 {
        return Err(Error::invalid(
            "maxout",
            alloc::format!("channel count {} is not divisible by {pieces} pieces", shape[1]),
        ));
    }
    Ok(Layout {
        batch: shape[0],
        out_channels: shape[1] / pieces,
        inner: shape[2..].iter().product(),
    })
}

pub(crate) fn maxout_cached(input: &Tensor, pieces: usize) -> Result<(Tensor, MaxoutCache)> {
    let l = layout(input, pieces)?;
    let data = input.data();
    let mut argmax = Vec::with_capacity(l.batch * l.out_channels * l.inner);
    for b in 0..l.batch {
        for oc in 0..l.out_channels {
            let group = (b * l.out_channels + oc) * pieces * l.inner;
            for s in 0..l.inner {
                let mut best = group + s;
                for p in 1..pieces {
                    let idx = group + p * l.inner + s;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                argmax.push(best);
            }
        }
    }
    let mut out_shape = input.shape().to_vec();
    out_shape[1] = l.out_channels;
    let out: Vec<Scalar> = argmax.iter().map(|&i| data[i]).collect();
    Ok((
        Tensor::new(&out_shape, out)?,
        MaxoutCache {
            input_shape: input.shape().to_vec(),
            output_shape: out_shape,
            argmax,
        },
    ))
}

pub(crate) fn maxout_backward(cache: &MaxoutCache, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != cache.output_shape.as_slice() {
        return Err(Error::mismatch("maxout backward", grad_out.shape(), &cache.output_shape));
    }
    let mut grad = Tensor::zeros(&cache.input_shape)?;
    let gi = grad.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gi[idx] += g;
    }
    Ok(grad)
}

pub fn maxout(input: &Tensor, pieces: usize) -> Result<Tensor> {
    maxout_cached(input, pieces).map(|(t, _)| t)
}

/// Smallest gap between the winning piece and the runner-up, infinity when
/// `pieces == 1`.
pub fn min_tie_gap(input: &Tensor, pieces: usize) -> Result<Scalar> {
    let l = layout(input, pieces)?;
    let data = input.data();
    let mut gap = Scalar::INFINITY;
    if pieces == 1 {
        return Ok(gap);
    }
    for g in 0..l.batch * l.out_channels {
        let group = g * pieces * l.inner;
        for s in 0..l.inner {
            let (mut first, mut second) = (Scalar::NEG_INFINITY, Scalar::NEG_INFINITY);
            for p in 0..pieces {
                let v = data[group + p * l.inner + s];
                if v > first {
                    second = first;
                    first = v;
                } else if v > second {
                    second = v;
                }
            }
            gap = gap.min(first - second);
        }
    }
    Ok(gap)
}
