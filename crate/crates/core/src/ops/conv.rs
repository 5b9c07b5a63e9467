//! Stride-1 2-D cross-correlation with optional "same" zero padding.
//!
//! Forward and backward lower each example to GEMM over an im2col buffer
//! laid out as `[C*kh*kw, H'*W']`.

use alloc::vec;

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Zero padding per side. Padded layers use `(k - 1) / 2`, which keeps the
/// spatial size for odd kernels.
#[inline]
pub fn padding_for(kernel: usize, padded: bool) -> usize {
    if padded {
        (kernel - 1) / 2
    } else {
        0
    }
}

/// Output extent along one axis, or `None` if the kernel does not fit.
pub fn output_extent(input: usize, kernel: usize, padded: bool) -> Option<usize> {
    let span = input + 2 * padding_for(kernel, padded);
    (kernel >= 1 && span >= kernel).then(|| span - kernel + 1)
}

/// Upper bound on the im2col buffer, in elements.
const COLS_BUDGET: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weights: &[usize], padded: bool) -> Result<Self> {
        let (&[batch, in_channels, in_h, in_w], &[out_channels, wc, kh, kw]) = (input, weights)
        else {
            return Err(Error::invalid(
                "conv2d",
                alloc::format!(
                    "expected input [B,C,H,W] and weights [O,C,kh,kw], got {input:?} and {weights:?}"
                ),
            ));
        };
        if wc != in_channels {
            return Err(Error::mismatch("conv2d (input vs weight channels)", input, weights));
        }
        let (Some(out_h), Some(out_w)) = (
            output_extent(in_h, kh, padded),
            output_extent(in_w, kw, padded),
        ) else {
            return Err(Error::invalid(
                "conv2d",
                alloc::format!("kernel {kh}x{kw} does not fit input {in_h}x{in_w} (padded: {padded})"),
            ));
        };
        Ok(ConvGeometry {
            batch,
            in_channels,
            in_h,
            in_w,
            out_channels,
            kh,
            kw,
            pad_h: padding_for(kh, padded),
            pad_w: padding_for(kw, padded),
            out_h,
            out_w,
        })
    }

    #[inline]
    fn patch_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    #[inline]
    fn plane(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    /// For each im2col row (one kernel tap) and output row `oy`, the input
    /// row read and the valid output column span `[x0, x1)`.
    #[inline]
    fn taps(&self, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let in_plane = self.in_h * self.in_w;
        for c in 0..self.in_channels {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    // Output columns whose input column ox + kx - pad_w is in range.
                    let x0 = self.pad_w.saturating_sub(kx);
                    let x1 = (self.in_w + self.pad_w).saturating_sub(kx).min(self.out_w);
                    if x0 >= x1 {
                        continue;
                    }
                    for oy in 0..self.out_h {
                        let iy = oy + ky;
                        if iy < self.pad_h || iy - self.pad_h >= self.in_h {
                            continue;
                        }
                        let src = c * in_plane + (iy - self.pad_h) * self.in_w + x0 + kx - self.pad_w;
                        f(row, oy, x0, x1, src);
                    }
                }
            }
        }
    }

    /// Examples lowered together so the GEMM sees a wide right-hand side
    /// without the buffer growing past `COLS_BUDGET` elements.
    fn chunk_len(&self) -> usize {
        (COLS_BUDGET / (self.patch_len() * self.plane()).max(1)).clamp(1, self.batch.max(1))
    }

    /// Lowers one example `[C, H, W]` into the im2col rows of `cols`, each
    /// row `ld` elements apart. Only in-range taps are written; entries that
    /// read padding must already be zero.
    fn im2col(&self, example: &[Scalar], cols: &mut [Scalar], ld: usize) {
        self.taps(|row, oy, x0, x1, src| {
            let from = row * ld + oy * self.out_w;
            cols[from + x0..from + x1].copy_from_slice(&example[src..src + (x1 - x0)]);
        });
    }

    /// Adjoint of [`ConvGeometry::im2col`] for one example.
    fn col2im(&self, cols: &[Scalar], ld: usize, example: &mut [Scalar]) {
        self.taps(|row, oy, x0, x1, src| {
            let from = row * ld + oy * self.out_w;
            for (d, s) in example[src..src + (x1 - x0)].iter_mut().zip(&cols[from + x0..from + x1]) {
                *d += s;
            }
        });
    }
}

/// Forward state kept for the backward pass. The im2col buffer is rebuilt
/// per example on the way back rather than stored for the whole batch.
#[derive(Debug, Clone)]
pub struct ConvCache {
    pub geometry: ConvGeometry,
    input: Tensor,
    weights: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

fn check_bias(bias: &Tensor, out_channels: usize) -> Result<()> {
    if bias.shape() != [out_channels] {
        return Err(Error::mismatch("conv2d (bias)", bias.shape(), &[out_channels]));
    }
    Ok(())
}

pub(crate) fn forward_cached(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    padded: bool,
) -> Result<(Tensor, ConvCache)> {
    let g = ConvGeometry::new(input.shape(), weights.shape(), padded)?;
    check_bias(bias, g.out_channels)?;
    let (k, plane, chunk) = (g.patch_len(), g.plane(), g.chunk_len());
    let in_len = g.in_channels * g.in_h * g.in_w;
    let out_len = g.out_channels * plane;
    let mut cols = vec![0.0; k * chunk * plane];
    let mut layout = None;
    let mut prod = vec![0.0; g.out_channels * chunk * plane];
    let mut out = vec![0.0; g.batch * out_len];
    for start in (0..g.batch).step_by(chunk) {
        let n = chunk.min(g.batch - start);
        let ld = n * plane;
        // im2col writes the same positions for every chunk of one width, so
        // the padding zeros survive until the width changes.
        if layout.replace(ld).is_some_and(|l| l != ld) {
            cols[..k * ld].fill(0.0);
        }
        for i in 0..n {
            let b = start + i;
            g.im2col(&input.data()[b * in_len..(b + 1) * in_len], &mut cols[i * plane..], ld);
        }
        gemm(
            1.0,
            MatRef::row_major(weights.data(), g.out_channels, k),
            MatRef::row_major(&cols[..k * ld], k, ld),
            0.0,
            &mut prod,
        );
        // [O, n*H'*W'] back to [n, O, H'*W'] with the bias added.
        for i in 0..n {
            let dst = &mut out[(start + i) * out_len..][..out_len];
            for (o, row) in dst.chunks_exact_mut(plane).enumerate() {
                let src = &prod[o * ld + i * plane..][..plane];
                for (d, s) in row.iter_mut().zip(src) {
                    *d = s + bias.data()[o];
                }
            }
        }
    }
    let out = Tensor::new(&g.output_shape(), out)?;
    Ok((
        out,
        ConvCache {
            geometry: g,
            input: input.clone(),
            weights: weights.clone(),
        },
    ))
}

pub(crate) fn backward_cached(cache: &ConvCache, grad_out: &Tensor) -> Result<ConvGrads> {
    let g = &cache.geometry;
    if grad_out.shape() != g.output_shape() {
        return Err(Error::mismatch("conv2d backward", grad_out.shape(), &g.output_shape()));
    }
    let (k, plane, chunk) = (g.patch_len(), g.plane(), g.chunk_len());
    let in_len = g.in_channels * g.in_h * g.in_w;
    let out_len = g.out_channels * plane;
    let mut grad_bias = vec![0.0; g.out_channels];
    let mut grad_w = vec![0.0; g.out_channels * k];
    let mut grad_in = vec![0.0; g.batch * in_len];
    let mut cols = vec![0.0; k * chunk * plane];
    let mut layout = None;
    let mut grad_cols = vec![0.0; k * chunk * plane];
    let mut go_t = vec![0.0; g.out_channels * chunk * plane];
    for start in (0..g.batch).step_by(chunk) {
        let n = chunk.min(g.batch - start);
        let ld = n * plane;
        // im2col writes the same positions for every chunk of one width, so
        // the padding zeros survive until the width changes.
        if layout.replace(ld).is_some_and(|l| l != ld) {
            cols[..k * ld].fill(0.0);
        }
        for i in 0..n {
            let b = start + i;
            let go = &grad_out.data()[b * out_len..(b + 1) * out_len];
            for (o, row) in go.chunks_exact(plane).enumerate() {
                grad_bias[o] += row.iter().sum::<Scalar>();
                go_t[o * ld + i * plane..][..plane].copy_from_slice(row);
            }
            g.im2col(&cache.input.data()[b * in_len..(b + 1) * in_len], &mut cols[i * plane..], ld);
        }
        let go_t = MatRef::row_major(&go_t[..g.out_channels * ld], g.out_channels, ld);
        gemm(1.0, go_t, MatRef::transposed(&cols[..k * ld], k, ld), 1.0, &mut grad_w);
        gemm(
            1.0,
            MatRef::transposed(cache.weights.data(), g.out_channels, k),
            go_t,
            0.0,
            &mut grad_cols,
        );
        for i in 0..n {
            let b = start + i;
            g.col2im(&grad_cols[i * plane..], ld, &mut grad_in[b * in_len..(b + 1) * in_len]);
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(&[g.batch, g.in_channels, g.in_h, g.in_w], grad_in)?,
        weights: Tensor::new(cache.weights.shape(), grad_w)?,
        bias: Tensor::new(&[g.out_channels], grad_bias)?,
    })
}

/// `input [B,C,H,W]`, `weights [O,C,kh,kw]`, `bias [O]` to `[B,O,H',W']`.
///
/// Cross-correlation (no kernel flip), stride 1.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    padded: bool,
) -> Result<Tensor> {
    forward_cached(input, weights, bias, padded).map(|(out, _)| out)
}

/// Gradients of `sum(grad_out * conv2d_forward(input, weights, bias))`.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    padded: bool,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let g = ConvGeometry::new(input.shape(), weights.shape(), padded)?;
    let cache = ConvCache {
        geometry: g,
        input: input.clone(),
        weights: weights.clone(),
    };
    backward_cached(&cache, grad_out)
}
