//! Distillation objectives.
//!
//! * [`kd_loss`]: cross-entropy against the labels plus `lambda` times the
//!   cross-entropy between the teacher's and the student's softened outputs.
//! * [`hint_loss`]: half the squared distance between a teacher hint and the
//!   regressed student guided layer.
//! * [`Regressor`]: the convolutional adapter from guided to hint shape.
//!
//! Both losses are averaged over the batch.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::netarch::HintPair;
use crate::ops::softmax::{log_softmax_rows, softmax_rows};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

mod regressor;

pub use regressor::{
    build_regressor, regressor_kernel_shape, regressor_param_count, HintOutput, Regressor, RegressorKind,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    pub tau: Scalar,
    pub lambda_init: Scalar,
    pub lambda_final: Scalar,
    pub anneal_epochs: usize,
    /// Hint/guided pair; `None` uses the pair the student architecture declares.
    pub hint: Option<HintPair>,
    /// Scale the soft term by `tau^2`. Off by default.
    pub tau_squared: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            tau: 3.0,
            lambda_init: 4.0,
            lambda_final: 1.0,
            anneal_epochs: 500,
            hint: None,
            tau_squared: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Config(msg));
        if !(self.tau >= 1.0 && self.tau.is_finite()) {
            return bad(alloc::format!("tau must be a finite value >= 1, got {}", self.tau));
        }
        if !(self.lambda_final >= 0.0 && self.lambda_init >= self.lambda_final && self.lambda_init.is_finite()) {
            return bad(alloc::format!(
                "need lambda_init >= lambda_final >= 0, got {} and {}",
                self.lambda_init,
                self.lambda_final
            ));
        }
        if self.anneal_epochs == 0 {
            return bad("anneal_epochs must be at least 1".into());
        }
        if let Some(h) = self.hint {
            if h.guided == 0 || h.hint == 0 {
                return bad("hint and guided layers are numbered from 1".into());
            }
        }
        Ok(())
    }

    /// Weight of the soft term at `epoch`, including the optional `tau^2`.
    pub fn soft_weight(&self, epoch: usize) -> Scalar {
        let l = lambda_at_epoch(self, epoch);
        if self.tau_squared {
            l * self.tau * self.tau
        } else {
            l
        }
    }
}

/// Linear decay from `lambda_init` at epoch 0 to `lambda_final` at
/// `anneal_epochs`, constant afterwards.
pub fn lambda_at_epoch(config: &DistillConfig, epoch: usize) -> Scalar {
    if epoch >= config.anneal_epochs {
        return config.lambda_final;
    }
    let t = epoch as Scalar / config.anneal_epochs as Scalar;
    config.lambda_init + (config.lambda_final - config.lambda_init) * t
}

/// Probabilities for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<Scalar>);

impl ProbVector {
    pub const TOLERANCE: Scalar = 1e-12;

    pub fn new(p: Vec<Scalar>) -> Result<Self> {
        if p.is_empty() || p.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid("ProbVector", "entries must be non-negative"));
        }
        let total: Scalar = p.iter().sum();
        if (total - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::invalid("ProbVector", alloc::format!("entries sum to {total}")));
        }
        Ok(ProbVector(p))
    }

    pub fn as_slice(&self) -> &[Scalar] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[Scalar]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_tau(tau: Scalar) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("softened_softmax", alloc::format!("tau must be positive, got {tau}")))
    }
}

/// `softmax(logits / tau)` for each row of `[B, K]` logits.
pub fn softened_softmax(logits: &Tensor, tau: Scalar) -> Result<Vec<ProbVector>> {
    check_tau(tau)?;
    let p = softmax_rows(logits, tau)?;
    let (_, k) = p.batch_rows();
    p.data().chunks_exact(k).map(|r| ProbVector::new(r.to_vec())).collect()
}

/// `[B, K]` one-hot rows for class labels.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    if labels.is_empty() || classes == 0 {
        return Err(Error::invalid("one_hot", "need at least one label and one class"));
    }
    let mut t = Tensor::zeros(&[labels.len(), classes])?;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::invalid("one_hot", alloc::format!("label {y} is outside 0..{classes}")));
        }
        t.data_mut()[i * classes + y] = 1.0;
    }
    Ok(t)
}

/// Loss value with its gradient with respect to the loss input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: Scalar,
    pub grad: Tensor,
}

fn check_one_hot(y: &Tensor) -> Result<()> {
    let (_, k) = y.batch_rows();
    for (i, row) in y.data().chunks_exact(k).enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::invalid("kd_loss", alloc::format!("label row {i} is not one-hot")));
        }
    }
    Ok(())
}

/// `H(y, softmax(a_S)) + lambda * H(softmax(a_T / tau), softmax(a_S / tau))`
/// averaged over the batch, and its gradient with respect to `a_S`.
pub fn kd_loss(
    y_true: &Tensor,
    student_logits: &Tensor,
    teacher_logits: &Tensor,
    tau: Scalar,
    lambda: Scalar,
) -> Result<LossOutput> {
    if y_true.shape() != student_logits.shape() {
        return Err(Error::mismatch("kd_loss", y_true.shape(), student_logits.shape()));
    }
    if teacher_logits.shape() != student_logits.shape() {
        return Err(Error::mismatch("kd_loss", teacher_logits.shape(), student_logits.shape()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("kd_loss", alloc::format!("lambda must be >= 0, got {lambda}")));
    }
    check_tau(tau)?;
    check_one_hot(y_true)?;
    let (b, _) = student_logits.batch_rows();
    let inv_b = 1.0 / b as Scalar;

    let log_p = log_softmax_rows(student_logits, 1.0)?;
    let p = softmax_rows(student_logits, 1.0)?;
    let mut value: Scalar = -y_true.dot(&log_p)?;
    let mut grad: Vec<Scalar> = p.data().iter().zip(y_true.data()).map(|(p, y)| (p - y) * inv_b).collect();

    if lambda != 0.0 {
        let pt = softmax_rows(teacher_logits, tau)?;
        let log_ps = log_softmax_rows(student_logits, tau)?;
        let ps = softmax_rows(student_logits, tau)?;
        value -= lambda * pt.dot(&log_ps)?;
        let scale = lambda * inv_b / tau;
        for ((g, s), t) in grad.iter_mut().zip(ps.data()).zip(pt.data()) {
            *g += scale * (s - t);
        }
    }
    Ok(LossOutput {
        value: value * inv_b,
        grad: Tensor::new(student_logits.shape(), grad)?,
    })
}

/// Plain cross-entropy against one-hot labels; `kd_loss` with `lambda = 0`.
pub fn cross_entropy(y_true: &Tensor, logits: &Tensor) -> Result<LossOutput> {
    kd_loss(y_true, logits, logits, 1.0, 0.0)
}

/// `0.5 * ||hint - regressed||^2` summed per example and averaged over the
/// batch, with its gradient with respect to `regressed`.
pub fn hint_loss(hint: &Tensor, regressed: &Tensor) -> Result<LossOutput> {
    if hint.shape() != regressed.shape() {
        return Err(Error::invalid(
            "hint_loss",
            alloc::format!(
                "regressor output {:?} does not match hint {:?}",
                regressed.shape(),
                hint.shape()
            ),
        ));
    }
    let b = hint.shape()[0] as Scalar;
    let mut value = 0.0;
    let grad: Vec<Scalar> = regressed
        .data()
        .iter()
        .zip(hint.data())
        .map(|(r, u)| {
            let d = r - u;
            value += d * d;
            d / b
        })
        .collect();
    Ok(LossOutput {
        value: 0.5 * value / b,
        grad: Tensor::new(hint.shape(), grad)?,
    })
}
