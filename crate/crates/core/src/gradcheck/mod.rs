//! Central finite-difference verification of analytic gradients.
//!
//! A [`Differentiable`] maps a list of input tensors to one output tensor and
//! can produce the vector-Jacobian product for a given upstream gradient. The
//! checker contracts the output with a random upstream tensor, so a single
//! scalar objective covers every output element, and compares each analytic
//! partial derivative with `(L(x + h) - L(x - h)) / 2h`.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::ops::{DiffOp, OpKind};
use crate::rng;
use crate::scalar::{Scalar, IS_F64};
use crate::tensor::Tensor;

pub mod suite;

pub trait Differentiable {
    fn eval(&mut self, inputs: &[Tensor]) -> Result<Tensor>;

    /// Gradients of `sum(upstream * eval(inputs))` with respect to every input.
    fn vjp(&mut self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: Scalar,
    pub tolerance: Scalar,
    /// Seed for the random upstream gradient.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-6,
            tolerance: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error over all inputs.
    pub max_rel_error: Scalar,
    /// Worst relative error per input tensor.
    pub per_input: Vec<Scalar>,
    /// `(input, flat index)` of the worst element.
    pub worst_at: Option<(usize, usize)>,
    pub non_finite: bool,
    pub passed: bool,
}

/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn relative_error(analytic: Scalar, numeric: Scalar) -> Scalar {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn objective(f: &mut dyn Differentiable, inputs: &[Tensor], upstream: &Tensor) -> Result<Scalar> {
    let out = f.eval(inputs)?;
    out.dot(upstream)
}

pub fn gradient_check(
    f: &mut dyn Differentiable,
    inputs: &[Tensor],
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if !IS_F64 {
        return Err(Error::GradCheckPrecision);
    }
    let out = f.eval(inputs)?;
    let mut r = rng::seeded(config.seed, rng::stream::GRADCHECK, 0);
    let upstream = Tensor::from_fn(out.shape(), |_| r.random_range(-1.0..=1.0))?;
    let analytic = f.vjp(inputs, &upstream)?;
    if analytic.len() != inputs.len() {
        return Err(Error::invalid(
            "gradient_check",
            alloc::format!("{} gradients for {} inputs", analytic.len(), inputs.len()),
        ));
    }

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut non_finite = !out.all_finite();
    let mut worst = 0.0;
    let mut worst_at = None;
    for (i, grad) in analytic.iter().enumerate() {
        if grad.shape() != inputs[i].shape() {
            return Err(Error::mismatch("gradient_check", grad.shape(), inputs[i].shape()));
        }
        let mut input_worst: Scalar = 0.0;
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + config.step;
            let plus = objective(f, &work, &upstream)?;
            work[i].data_mut()[j] = x0 - config.step;
            let minus = objective(f, &work, &upstream)?;
            work[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * config.step);
            let a = grad.data()[j];
            if !numeric.is_finite() || !a.is_finite() {
                non_finite = true;
                continue;
            }
            let e = relative_error(a, numeric);
            if e > input_worst {
                input_worst = e;
            }
            if e > worst {
                worst = e;
                worst_at = Some((i, j));
            }
        }
        per_input.push(input_worst);
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        per_input,
        worst_at,
        non_finite,
        passed: !non_finite && worst <= config.tolerance,
    })
}

/// A chain of [`DiffOp`]s checked as one function.
///
/// Inputs are `[x, params of op 0..., params of op 1..., ...]` in op order.
#[derive(Debug, Clone)]
pub struct Chain {
    ops: Vec<DiffOp>,
}

impl Chain {
    pub fn new(kinds: &[OpKind]) -> Self {
        Chain {
            ops: kinds.iter().map(|&k| DiffOp::new(k)).collect(),
        }
    }

    pub fn single(kind: OpKind) -> Self {
        Self::new(&[kind])
    }

    pub fn param_count(&self) -> usize {
        self.ops.iter().map(|op| op.kind().param_arity()).sum()
    }

    fn run(&mut self, inputs: &[Tensor], mut visit: impl FnMut(OpKind, &Tensor) -> Result<()>) -> Result<Tensor> {
        if inputs.len() != 1 + self.param_count() {
            return Err(Error::invalid(
                "chain",
                alloc::format!("expected {} inputs, got {}", 1 + self.param_count(), inputs.len()),
            ));
        }
        let mut x = inputs[0].clone();
        let mut next = 1;
        for op in &mut self.ops {
            let arity = op.kind().param_arity();
            let params: Vec<&Tensor> = inputs[next..next + arity].iter().collect();
            next += arity;
            visit(op.kind(), &x)?;
            x = op.forward(&x, &params)?;
        }
        Ok(x)
    }

    /// Smallest distance to a non-differentiable point over all ops.
    pub fn tie_gap(&mut self, inputs: &[Tensor]) -> Result<Scalar> {
        let mut gap = Scalar::INFINITY;
        self.run(inputs, |kind, x| {
            gap = gap.min(kind.tie_gap(x)?);
            Ok(())
        })?;
        Ok(gap)
    }
}

impl Differentiable for Chain {
    fn eval(&mut self, inputs: &[Tensor]) -> Result<Tensor> {
        self.run(inputs, |_, _| Ok(()))
    }

    fn vjp(&mut self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
        self.eval(inputs)?;
        let mut grads: Vec<Option<Tensor>> = (0..inputs.len()).map(|_| None).collect();
        let mut g = upstream.clone();
        let mut next = inputs.len();
        for op in self.ops.iter().rev() {
            let og = op.backward(&g)?;
            next -= og.params.len();
            for (k, p) in og.params.into_iter().enumerate() {
                grads[next + k] = Some(p);
            }
            g = og.input;
        }
        grads[0] = Some(g);
        grads
            .into_iter()
            .map(|g| g.ok_or_else(|| Error::invalid("chain", "missing gradient")))
            .collect()
    }
}

type EvalFn<'a> = Box<dyn FnMut(&[Tensor]) -> Result<Tensor> + 'a>;
type VjpFn<'a> = Box<dyn FnMut(&[Tensor], &Tensor) -> Result<Vec<Tensor>> + 'a>;

/// Adapter from a pair of closures.
pub struct FnDifferentiable<'a> {
    eval: EvalFn<'a>,
    vjp: VjpFn<'a>,
}

impl<'a> FnDifferentiable<'a> {
    pub fn new(
        eval: impl FnMut(&[Tensor]) -> Result<Tensor> + 'a,
        vjp: impl FnMut(&[Tensor], &Tensor) -> Result<Vec<Tensor>> + 'a,
    ) -> Self {
        FnDifferentiable {
            eval: Box::new(eval),
            vjp: Box::new(vjp),
        }
    }
}

impl Differentiable for FnDifferentiable<'_> {
    fn eval(&mut self, inputs: &[Tensor]) -> Result<Tensor> {
        (self.eval)(inputs)
    }

    fn vjp(&mut self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
        (self.vjp)(inputs, upstream)
    }
}

/// Wraps another differentiable and scales its analytic gradients. A factor
/// other than one must make the check fail; used as a negative control.
pub struct Corrupted<D> {
    pub inner: D,
    pub factor: Scalar,
}

impl<D: Differentiable> Differentiable for Corrupted<D> {
    fn eval(&mut self, inputs: &[Tensor]) -> Result<Tensor> {
        self.inner.eval(inputs)
    }

    fn vjp(&mut self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self
            .inner
            .vjp(inputs, upstream)?
            .into_iter()
            .map(|g| g.scale(self.factor))
            .collect())
    }
}
