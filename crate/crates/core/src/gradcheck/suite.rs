//! Randomized gradient checks over every differentiable op and both losses.
//!
//! Each case draws a shape and inputs uniformly from `[-1, 1]`. Inputs within
//! [`TIE_EXCLUSION`] of a max or relu tie are redrawn, since finite
//! differences straddling a kink do not measure the derivative.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::{gradient_check, Chain, Corrupted, Differentiable, FnDifferentiable, GradCheckConfig};
use crate::distill::{build_regressor, hint_loss, kd_loss, one_hot};
use crate::error::{Error, Result};
use crate::netarch::{BlockActivation, FeatureShape};
use crate::ops::{conv2d_forward, OpKind};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Minimum distance from a non-differentiable point for accepted inputs.
pub const TIE_EXCLUSION: Scalar = 1e-4;

const MAX_REDRAWS: usize = 200;

/// Names accepted by [`run_suite`], in run order.
pub const SUITE_OPS: &[&str] = &[
    "conv2d",
    "maxpool2d",
    "global_maxpool",
    "maxout",
    "fully_connected",
    "relu",
    "sigmoid",
    "softmax",
    "kd_loss",
    "hint_loss",
    "fitnet_block",
];

#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub cases: usize,
    /// Worst relative error over all cases.
    pub worst: Scalar,
    /// Input shape of the worst case.
    pub worst_shape: Vec<usize>,
    pub passed: bool,
}

fn uniform(shape: &[usize], r: &mut Rng) -> Result<Tensor> {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..=1.0))
}

fn dim(r: &mut Rng, hi: usize) -> usize {
    r.random_range(1..=hi)
}

/// A single case: the function under test, its inputs, and the distance of
/// those inputs from a tie (infinity for smooth functions).
struct Case {
    f: alloc::boxed::Box<dyn Differentiable>,
    inputs: Vec<Tensor>,
}

fn chain_case(kinds: &[OpKind], inputs: Vec<Tensor>) -> Result<(Case, Scalar)> {
    let mut chain = Chain::new(kinds);
    let gap = chain.tie_gap(&inputs)?;
    Ok((
        Case {
            f: alloc::boxed::Box::new(chain),
            inputs,
        },
        gap,
    ))
}

fn draw(op: &str, r: &mut Rng, case: usize) -> Result<(Case, Scalar)> {
    let (b, c) = (dim(r, 4), dim(r, 4));
    let (h, w) = (dim(r, 8), dim(r, 8));
    match op {
        "conv2d" => {
            let padded = case % 2 == 1;
            let (kh, kw) = if padded {
                (2 * r.random_range(0..=2) + 1, 2 * r.random_range(0..=2) + 1)
            } else {
                (dim(r, h.min(5)), dim(r, w.min(5)))
            };
            let o = dim(r, 4);
            chain_case(
                &[OpKind::Conv2d { padded }],
                vec![uniform(&[b, c, h, w], r)?, uniform(&[o, c, kh, kw], r)?, uniform(&[o], r)?],
            )
        }
        "maxpool2d" => {
            let (wh, ww) = (dim(r, h.min(4)), dim(r, w.min(4)));
            let (oh, ow) = if case % 2 == 1 {
                (r.random_range(0..wh), r.random_range(0..ww))
            } else {
                (0, 0)
            };
            chain_case(
                &[OpKind::MaxPool2d { window: (wh, ww), overlap: (oh, ow) }],
                vec![uniform(&[b, c, h, w], r)?],
            )
        }
        "global_maxpool" => chain_case(&[OpKind::GlobalMaxPool], vec![uniform(&[b, c, h, w], r)?]),
        "maxout" => {
            let pieces = dim(r, 3);
            chain_case(&[OpKind::Maxout { pieces }], vec![uniform(&[b, c * pieces, h, w], r)?])
        }
        "fully_connected" => {
            let u = dim(r, 8);
            chain_case(
                &[OpKind::FullyConnected],
                vec![uniform(&[b, c, h, w], r)?, uniform(&[u, c * h * w], r)?, uniform(&[u], r)?],
            )
        }
        "relu" => chain_case(&[OpKind::Relu], vec![uniform(&[b, c, h, w], r)?]),
        "sigmoid" => chain_case(&[OpKind::Sigmoid], vec![uniform(&[b, c, h, w], r)?]),
        "softmax" => {
            let k = r.random_range(2..=10);
            chain_case(&[OpKind::Softmax], vec![uniform(&[b, k], r)?.scale(3.0)])
        }
        "kd_loss" => kd_case(r, b),
        "hint_loss" => hint_case(r, b),
        "fitnet_block" => {
            let pieces = 2;
            let o = dim(r, 3) * pieces;
            let (h, w) = (h.max(2), w.max(2));
            chain_case(
                &[
                    OpKind::Conv2d { padded: true },
                    OpKind::Maxout { pieces },
                    OpKind::MaxPool2d { window: (2, 2), overlap: (0, 0) },
                ],
                vec![uniform(&[b, c, h, w], r)?, uniform(&[o, c, 3, 3], r)?, uniform(&[o], r)?],
            )
        }
        _ => Err(Error::invalid(
            "gradient check suite",
            alloc::format!("unknown op `{op}`; known: {}", SUITE_OPS.join(", ")),
        )),
    }
}

/// Loss value as a one-element tensor, differentiated with respect to the
/// student logits.
fn kd_case(r: &mut Rng, b: usize) -> Result<(Case, Scalar)> {
    let k = r.random_range(2..=6);
    let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..k)).collect();
    let y = one_hot(&labels, k)?;
    let teacher = uniform(&[b, k], r)?.scale(4.0);
    let tau = r.random_range(1.0..=5.0);
    let lambda = r.random_range(0.0..=4.0);
    let y2 = y.clone();
    let t2 = teacher.clone();
    let f = FnDifferentiable::new(
        move |ins: &[Tensor]| Ok(Tensor::scalar(kd_loss(&y, &ins[0], &teacher, tau, lambda)?.value)),
        move |ins: &[Tensor], up: &Tensor| Ok(vec![kd_loss(&y2, &ins[0], &t2, tau, lambda)?.grad.scale(up.data()[0])]),
    );
    Ok((
        Case {
            f: alloc::boxed::Box::new(f),
            inputs: vec![uniform(&[b, k], r)?.scale(4.0)],
        },
        Scalar::INFINITY,
    ))
}

/// Hint loss through a convolutional regressor; differentiated with respect
/// to the guided activations and the regressor weights and bias.
fn hint_case(r: &mut Rng, b: usize) -> Result<(Case, Scalar)> {
    let activation = match r.random_range(0..4) {
        0 => BlockActivation::Maxout(2),
        1 => BlockActivation::Relu,
        2 => BlockActivation::Sigmoid,
        _ => BlockActivation::Identity,
    };
    let (ng1, ng2) = (dim(r, 8), dim(r, 8));
    let guided = FeatureShape::new(dim(r, 4), ng1, ng2);
    let hint = FeatureShape::new(dim(r, 4), dim(r, ng1), dim(r, ng2));
    let reg = build_regressor(hint, guided, activation, 1.0, r.random())?;
    let x = uniform(&guided.batched(b), r)?;
    let w = uniform(reg.weights.shape(), r)?;
    let bias = uniform(reg.bias.shape(), r)?;
    let target = match activation {
        BlockActivation::Sigmoid => uniform(&hint.batched(b), r)?.map(|v| 0.5 + 0.4 * v),
        _ => uniform(&hint.batched(b), r)?,
    };
    let pre = conv2d_forward(&x, &w, &bias, false)?;
    let gap = match activation {
        BlockActivation::Maxout(p) => OpKind::Maxout { pieces: p }.tie_gap(&pre)?,
        BlockActivation::Relu => OpKind::Relu.tie_gap(&pre)?,
        _ => Scalar::INFINITY,
    };
    let mut fwd = reg.clone();
    let mut bwd = reg;
    let t2 = target.clone();
    let f = FnDifferentiable::new(
        move |ins: &[Tensor]| {
            fwd.weights = ins[1].clone();
            fwd.bias = ins[2].clone();
            let out = fwd.forward(&ins[0])?;
            Ok(Tensor::scalar(hint_loss(&target, &out)?.value))
        },
        move |ins: &[Tensor], up: &Tensor| {
            bwd.weights = ins[1].clone();
            bwd.bias = ins[2].clone();
            let g = bwd.hint_step(&t2, &ins[0])?;
            let s = up.data()[0];
            Ok(vec![g.guided.scale(s), g.weights.scale(s), g.bias.scale(s)])
        },
    );
    Ok((
        Case {
            f: alloc::boxed::Box::new(f),
            inputs: vec![x, w, bias],
        },
        gap,
    ))
}

/// Checks `op` on `cases` random shapes. With `corrupt`, analytic gradients
/// are doubled, which must make the check fail.
pub fn check_op(op: &str, cases: usize, seed: u64, corrupt: bool) -> Result<OpCheck> {
    let name = SUITE_OPS
        .iter()
        .copied()
        .find(|&n| n == op)
        .ok_or_else(|| Error::invalid("gradient check suite", alloc::format!("unknown op `{op}`; known: {}", SUITE_OPS.join(", "))))?;
    let op_index = SUITE_OPS.iter().position(|&n| n == name).unwrap_or(0) as u64;
    let mut worst = 0.0;
    let mut worst_shape = Vec::new();
    let mut passed = true;
    for case in 0..cases {
        let mut r = rng::seeded(seed, rng::stream::GRADCHECK, (op_index << 32) | case as u64);
        let mut accepted = None;
        for _ in 0..MAX_REDRAWS {
            let (c, gap) = draw(name, &mut r, case)?;
            if gap >= TIE_EXCLUSION {
                accepted = Some(c);
                break;
            }
        }
        let Case { f, inputs } = accepted.ok_or_else(|| {
            Error::invalid("gradient check suite", alloc::format!("{name}: no tie-free input after {MAX_REDRAWS} draws"))
        })?;
        let config = GradCheckConfig {
            seed: seed ^ case as u64,
            ..GradCheckConfig::default()
        };
        let report = if corrupt {
            gradient_check(&mut Corrupted { inner: f, factor: 2.0 }, &inputs, &config)?
        } else {
            let mut f = f;
            gradient_check(f.as_mut(), &inputs, &config)?
        };
        passed &= report.passed;
        if report.max_rel_error >= worst || report.max_rel_error.is_nan() {
            worst = report.max_rel_error;
            worst_shape = inputs[0].shape().to_vec();
        }
    }
    Ok(OpCheck {
        op: name,
        cases,
        worst,
        worst_shape,
        passed,
    })
}

/// Runs [`check_op`] for every op in [`SUITE_OPS`], or only `only`.
pub fn run_suite(only: Option<&str>, cases: usize, seed: u64, corrupt: bool) -> Result<Vec<OpCheck>> {
    match only {
        Some(op) => Ok(vec![check_op(op, cases, seed, corrupt)?]),
        None => SUITE_OPS.iter().map(|op| check_op(op, cases, seed, corrupt)).collect(),
    }
}

impl<D: Differentiable + ?Sized> Differentiable for alloc::boxed::Box<D> {
    fn eval(&mut self, inputs: &[Tensor]) -> Result<Tensor> {
        (**self).eval(inputs)
    }

    fn vjp(&mut self, inputs: &[Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
        (**self).vjp(inputs, upstream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_ops_pass_and_corrupted_fail() {
        for op in SUITE_OPS {
            let ok = check_op(op, 3, 5, false).unwrap();
            assert!(ok.passed, "{ok:?}");
            let bad = check_op(op, 3, 5, true).unwrap();
            assert!(!bad.passed, "{bad:?}");
        }
        assert!(check_op("nope", 1, 0, false).is_err());
    }
}
