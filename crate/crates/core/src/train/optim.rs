use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::{sqrt, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    RmsProp,
    /// Classical momentum with linearly scheduled coefficient and rate.
    SgdMomentum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: Scalar,
    /// RMSProp accumulator decay.
    pub decay: Scalar,
    pub epsilon: Scalar,
    pub momentum_initial: Scalar,
    pub momentum_final: Scalar,
    /// Momentum-variant rate reached at `saturation_epoch`; `None` keeps
    /// `learning_rate` constant.
    pub learning_rate_final: Option<Scalar>,
    pub saturation_epoch: usize,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::RmsProp,
            learning_rate: 0.005,
            decay: 0.9,
            epsilon: 1e-8,
            momentum_initial: 0.1,
            momentum_final: 0.9,
            learning_rate_final: None,
            saturation_epoch: 100,
            batch_size: 128,
        }
    }
}

fn lerp(a: Scalar, b: Scalar, epoch: usize, end: usize) -> Scalar {
    if end == 0 || epoch >= end {
        b
    } else {
        a + (b - a) * (epoch as Scalar / end as Scalar)
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(alloc::format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.decay) {
            return bad(alloc::format!("decay must be in [0, 1), got {}", self.decay));
        }
        if !(self.epsilon > 0.0) {
            return bad(alloc::format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        for m in [self.momentum_initial, self.momentum_final] {
            if !(0.0..1.0).contains(&m) {
                return bad(alloc::format!("momentum must be in [0, 1), got {m}"));
            }
        }
        if let Some(lr) = self.learning_rate_final {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(alloc::format!("learning_rate_final must be positive, got {lr}"));
            }
        }
        Ok(())
    }

    /// Momentum coefficient at `epoch`.
    pub fn momentum_at(&self, epoch: usize) -> Scalar {
        lerp(self.momentum_initial, self.momentum_final, epoch, self.saturation_epoch)
    }

    /// Learning rate at `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> Scalar {
        match (self.kind, self.learning_rate_final) {
            (OptimizerKind::SgdMomentum, Some(end)) => lerp(self.learning_rate, end, epoch, self.saturation_epoch),
            _ => self.learning_rate,
        }
    }
}

fn check(param: &Tensor, grad: &Tensor, state: &Tensor) -> Result<()> {
    if param.shape() != grad.shape() || state.shape() != grad.shape() {
        return Err(Error::mismatch("optimizer step", param.shape(), grad.shape()));
    }
    Ok(())
}

/// `acc <- decay * acc + (1 - decay) * g^2`, then
/// `param <- param - lr * g / sqrt(acc + epsilon)`.
pub fn rmsprop_step(
    param: &mut Tensor,
    grad: &Tensor,
    acc: &mut Tensor,
    learning_rate: Scalar,
    decay: Scalar,
    epsilon: Scalar,
) -> Result<()> {
    check(param, grad, acc)?;
    for ((p, &g), a) in param.data_mut().iter_mut().zip(grad.data()).zip(acc.data_mut()) {
        *a = decay * *a + (1.0 - decay) * g * g;
        *p -= learning_rate * g / sqrt(*a + epsilon);
    }
    Ok(())
}

/// `v <- momentum * v - lr * g`, then `param <- param + v`.
pub fn momentum_step(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    learning_rate: Scalar,
    momentum: Scalar,
) -> Result<()> {
    check(param, grad, velocity)?;
    for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        *v = momentum * *v - learning_rate * g;
        *p += *v;
    }
    Ok(())
}

/// Optimizer state for a fixed list of parameter slots.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    state: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            state: Vec::new(),
        })
    }

    /// Updates every `(param, grad)` slot. Slots must be given in the same
    /// order on every call.
    pub fn step(&mut self, epoch: usize, slots: &mut [(&mut Tensor, &Tensor)]) -> Result<()> {
        if slots.iter().any(|(_, g)| !g.all_finite()) {
            return Err(Error::Diverged { epoch, what: "non-finite gradient" });
        }
        if self.state.is_empty() {
            self.state = slots.iter().map(|(_, g)| g.zeros_like()).collect();
        }
        if self.state.len() != slots.len() {
            return Err(Error::invalid(
                "optimizer step",
                alloc::format!("{} slots, state for {}", slots.len(), self.state.len()),
            ));
        }
        let c = self.config;
        let lr = c.learning_rate_at(epoch);
        for ((p, g), s) in slots.iter_mut().zip(&mut self.state) {
            match c.kind {
                OptimizerKind::RmsProp => rmsprop_step(p, g, s, lr, c.decay, c.epsilon)?,
                OptimizerKind::SgdMomentum => momentum_step(p, g, s, lr, c.momentum_at(epoch))?,
            }
        }
        Ok(())
    }
}
