//! Row-wise softmax over `[B, K]` logits with max subtraction.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::{exp, ln, Scalar};
use crate::tensor::Tensor;

fn rows(logits: &Tensor) -> Result<(usize, usize)> {
    if logits.rank() != 2 {
        return Err(Error::invalid(
            "softmax",
            alloc::format!("expected [B, K] logits, got {:?}", logits.shape()),
        ));
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite("softmax logits"));
    }
    Ok(logits.batch_rows())
}

/// `softmax(logits / tau)` per row.
pub fn softmax_rows(logits: &Tensor, tau: Scalar) -> Result<Tensor> {
    let (_, k) = rows(logits)?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let m = row.iter().fold(Scalar::NEG_INFINITY, |m, &v| m.max(v / tau));
        let start = out.len();
        let mut total = 0.0;
        for &v in row {
            let e = exp(v / tau - m);
            total += e;
            out.push(e);
        }
        for p in &mut out[start..] {
            *p /= total;
        }
    }
    Tensor::new(logits.shape(), out)
}

/// `log softmax(logits / tau)` per row.
pub fn log_softmax_rows(logits: &Tensor, tau: Scalar) -> Result<Tensor> {
    let (_, k) = rows(logits)?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let m = row.iter().fold(Scalar::NEG_INFINITY, |m, &v| m.max(v / tau));
        let lse = ln(row.iter().map(|&v| exp(v / tau - m)).sum::<Scalar>());
        out.extend(row.iter().map(|&v| v / tau - m - lse));
    }
    Tensor::new(logits.shape(), out)
}

/// Vector-Jacobian product of softmax given its forward output.
pub fn softmax_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if output.shape() != grad_out.shape() {
        return Err(Error::mismatch("softmax backward", grad_out.shape(), output.shape()));
    }
    let (_, k) = output.batch_rows();
    let mut out = Vec::with_capacity(output.len());
    for (y, g) in output.data().chunks_exact(k).zip(grad_out.data().chunks_exact(k)) {
        let inner: Scalar = y.iter().zip(g).map(|(a, b)| a * b).sum();
        out.extend(y.iter().zip(g).map(|(yi, gi)| yi * (gi - inner)));
    }
    Tensor::new(output.shape(), out)
}
