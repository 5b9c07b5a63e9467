//! Max pooling, windowed and global.
//!
//! Ties resolve to the first maximal element in row-major scan order of the
//! window, and the backward pass routes the whole gradient there.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pooling stride along one axis, `window - overlap`, or an error when the
/// overlap is not smaller than the window.
pub fn pool_stride(window: usize, overlap: usize) -> Result<usize> {
    if window == 0 {
        return Err(Error::invalid("maxpool2d", "window extent must be at least 1"));
    }
    if overlap >= window {
        return Err(Error::invalid(
            "maxpool2d",
            alloc::format!("overlap {overlap} must be smaller than window {window}"),
        ));
    }
    Ok(window - overlap)
}

/// `floor((n - window) / stride) + 1`, or `None` if the window does not fit.
pub fn pool_extent(input: usize, window: usize, overlap: usize) -> Option<usize> {
    let stride = pool_stride(window, overlap).ok()?;
    (input >= window).then(|| (input - window) / stride + 1)
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    /// Flat input index of the selected element, per output element.
    argmax: Vec<usize>,
}

struct PoolGeometry {
    planes: usize,
    h: usize,
    w: usize,
    wh: usize,
    ww: usize,
    sh: usize,
    sw: usize,
    oh: usize,
    ow: usize,
}

fn window_argmax(data: &[Scalar], base: usize, y0: usize, x0: usize, g: &PoolGeometry) -> usize {
    let mut best = base + y0 * g.w + x0;
    let mut best_v = data[best];
    for ky in 0..g.wh {
        let row = base + (y0 + ky) * g.w + x0;
        for kx in 0..g.ww {
            let v = data[row + kx];
            if v > best_v {
                best_v = v;
                best = row + kx;
            }
        }
    }
    best
}

fn geometry(input: &Tensor, window: (usize, usize), overlap: (usize, usize)) -> Result<PoolGeometry> {
    let [b, c, h, w] = input.dims4("maxpool2d")?;
    let sh = pool_stride(window.0, overlap.0)?;
    let sw = pool_stride(window.1, overlap.1)?;
    let (Some(oh), Some(ow)) = (
        pool_extent(h, window.0, overlap.0),
        pool_extent(w, window.1, overlap.1),
    ) else {
        return Err(Error::invalid(
            "maxpool2d",
            alloc::format!("window {}x{} does not fit input {h}x{w}", window.0, window.1),
        ));
    };
    Ok(PoolGeometry {
        planes: b * c,
        h,
        w,
        wh: window.0,
        ww: window.1,
        sh,
        sw,
        oh,
        ow,
    })
}

pub(crate) fn maxpool_cached(
    input: &Tensor,
    window: (usize, usize),
    overlap: (usize, usize),
) -> Result<(Tensor, PoolCache)> {
    let g = geometry(input, window, overlap)?;
    let data = input.data();
    let mut argmax = Vec::with_capacity(g.planes * g.oh * g.ow);
    for p in 0..g.planes {
        let base = p * g.h * g.w;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                argmax.push(window_argmax(data, base, oy * g.sh, ox * g.sw, &g));
            }
        }
    }
    let out: Vec<Scalar> = argmax.iter().map(|&i| data[i]).collect();
    let shape = input.shape();
    let out_shape = [shape[0], shape[1], g.oh, g.ow];
    Ok((
        Tensor::new(&out_shape, out)?,
        PoolCache {
            input_shape: shape.to_vec(),
            output_shape: out_shape.to_vec(),
            argmax,
        },
    ))
}

pub(crate) fn global_maxpool_cached(input: &Tensor) -> Result<(Tensor, PoolCache)> {
    let [b, c, h, w] = input.dims4("global_maxpool")?;
    let plane = h * w;
    let data = input.data();
    let argmax: Vec<usize> = (0..b * c)
        .map(|p| {
            let base = p * plane;
            let mut best = base;
            for i in base + 1..base + plane {
                if data[i] > data[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    let out: Vec<Scalar> = argmax.iter().map(|&i| data[i]).collect();
    Ok((
        Tensor::new(&[b, c, 1, 1], out)?,
        PoolCache {
            input_shape: input.shape().to_vec(),
            output_shape: vec![b, c, 1, 1],
            argmax,
        },
    ))
}

pub(crate) fn pool_backward(cache: &PoolCache, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != cache.output_shape.as_slice() {
        return Err(Error::mismatch("maxpool backward", grad_out.shape(), &cache.output_shape));
    }
    let mut grad = Tensor::zeros(&cache.input_shape)?;
    let gi = grad.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gi[idx] += g;
    }
    Ok(grad)
}

/// Max pooling with window `(wh, ww)` and overlap `(oh, ow)`; the stride is
/// `window - overlap` per axis.
pub fn maxpool2d(input: &Tensor, window: (usize, usize), overlap: (usize, usize)) -> Result<Tensor> {
    maxpool_cached(input, window, overlap).map(|(t, _)| t)
}

/// Per-channel maximum over all spatial positions, `[B,C,H,W] -> [B,C,1,1]`.
pub fn global_maxpool(input: &Tensor) -> Result<Tensor> {
    global_maxpool_cached(input).map(|(t, _)| t)
}

/// Gap between the largest and second-largest value over all pooling windows,
/// or infinity if every window has a single element. Used to keep gradient
/// checks away from points where the argmax can flip.
pub fn min_tie_gap(input: &Tensor, window: (usize, usize), overlap: (usize, usize)) -> Result<Scalar> {
    let g = geometry(input, window, overlap)?;
    let data = input.data();
    let mut gap = Scalar::INFINITY;
    for p in 0..g.planes {
        let base = p * g.h * g.w;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let (mut first, mut second) = (Scalar::NEG_INFINITY, Scalar::NEG_INFINITY);
                for ky in 0..g.wh {
                    for kx in 0..g.ww {
                        let v = data[base + (oy * g.sh + ky) * g.w + ox * g.sw + kx];
                        if v > first {
                            second = first;
                            first = v;
                        } else if v > second {
                            second = v;
                        }
                    }
                }
                gap = gap.min(first - second);
            }
        }
    }
    Ok(gap)
}
