use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;

use super::network::Network;
use super::optim::Optimizer;
use super::params::{init_params, ParameterSet};
use super::{EarlyStopper, EpochRecord, Metric, Splits, Stage, TrainConfig, TrainReport};
use crate::data::{flip_batch, Dataset};
use crate::distill::{argmax, build_regressor, hint_loss, kd_loss, one_hot, DistillConfig, Regressor};
use crate::error::{Error, Result};
use crate::netarch::{ArchitectureSpec, BlockActivation, FeatureShape, HintPair};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Hint pre-training of the guided layers, then distillation.
    Ht,
    /// Distillation from a fresh initialization.
    Kd,
    /// Cross-entropy on the labels only.
    Backprop,
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Ht => "ht",
            TrainMode::Kd => "kd",
            TrainMode::Backprop => "backprop",
        }
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed, rng::stream::SHUFFLE, epoch as u64));
    order
}

/// Training batch for `indices`, mirrored per the flip schedule.
fn train_batch(data: &Dataset, indices: &[usize], cfg: &TrainConfig, epoch: usize) -> Result<(Tensor, Vec<usize>)> {
    let (mut x, y) = data.batch(indices)?;
    if cfg.flip_probability > 0.0 {
        flip_batch(&mut x, indices, cfg.seed, epoch, cfg.flip_probability)?;
    }
    Ok((x, y))
}

/// Outputs of `layers` for every example, in dataset order.
fn forward_all(net: &mut Network, params: &ParameterSet, data: &Dataset, layers: Range<usize>) -> Result<Tensor> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut parts = Vec::new();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _) = data.batch(chunk)?;
        parts.push(net.forward(params, &x, layers.clone())?);
    }
    net.clear();
    Tensor::concat_rows(&parts)
}

fn logits_all(net: &mut Network, params: &ParameterSet, data: &Dataset) -> Result<Tensor> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut parts = Vec::new();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _) = data.batch(chunk)?;
        parts.push(net.logits(params, &x)?);
    }
    net.clear();
    Tensor::concat_rows(&parts)
}

fn check_head(arch: &ArchitectureSpec, data: &Dataset) -> Result<()> {
    let k = arch.class_count()?;
    if k != data.classes() {
        return Err(Error::Dataset(alloc::format!(
            "`{}` predicts {k} classes, the dataset has {}",
            arch.name,
            data.classes()
        )));
    }
    if arch.input != data.shape() {
        return Err(Error::Dataset(alloc::format!(
            "`{}` expects {} inputs, the dataset has {}",
            arch.name,
            arch.input,
            data.shape()
        )));
    }
    Ok(())
}

/// Predicted class per example; ties go to the lowest class index.
pub fn predict(params: &ParameterSet, arch: &ArchitectureSpec, data: &Dataset) -> Result<Vec<usize>> {
    check_head(arch, data)?;
    if data.is_empty() {
        return Ok(Vec::new());
    }
    let mut net = Network::new(arch)?;
    let logits = logits_all(&mut net, params, data)?;
    let (_, k) = logits.batch_rows();
    Ok(logits.data().chunks_exact(k).map(argmax).collect())
}

fn error_rate(net: &mut Network, params: &ParameterSet, data: &Dataset) -> Result<Scalar> {
    let logits = logits_all(net, params, data)?;
    let (_, k) = logits.batch_rows();
    let wrong = logits
        .data()
        .chunks_exact(k)
        .zip(data.labels())
        .filter(|(row, &y)| argmax(row) != y)
        .count();
    Ok(wrong as Scalar / data.len() as Scalar)
}

/// Misclassification rate of `params` on `data`.
pub fn evaluate(params: &ParameterSet, arch: &ArchitectureSpec, data: &Dataset) -> Result<Scalar> {
    check_head(arch, data)?;
    if data.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".into()));
    }
    error_rate(&mut Network::new(arch)?, params, data)
}

/// Runs epochs until the stopper fires, keeping the best-validation state.
fn drive<S: Clone>(
    cfg: &TrainConfig,
    stage: Stage,
    metric: Metric,
    initial_validation: Scalar,
    state: &mut S,
    mut run_epoch: impl FnMut(usize, &mut S) -> Result<(Scalar, Scalar, Option<Scalar>)>,
) -> Result<TrainReport> {
    let mut stopper = EarlyStopper::new(cfg.stop);
    let mut best = state.clone();
    let mut epochs = Vec::new();
    let mut epoch = 0;
    let stop_reason = loop {
        let (train_loss, validation, lambda) = run_epoch(epoch, state)?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch, what: "non-finite training loss" });
        }
        if !validation.is_finite() {
            return Err(Error::Diverged { epoch, what: "non-finite validation metric" });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation,
            lambda,
        });
        if stopper.observe(epoch, validation) {
            best = state.clone();
        }
        if let Some(reason) = stopper.stop_after(epoch) {
            break reason;
        }
        epoch += 1;
    };
    *state = best;
    Ok(TrainReport {
        stage,
        metric,
        seed: cfg.seed,
        initial_validation,
        epochs,
        best_epoch: stopper.best_epoch,
        best_validation: stopper.best,
        stop_reason,
        test_error: None,
        wall_clock_seconds: None,
    })
}

struct Teacher<'a> {
    net: Network,
    params: &'a ParameterSet,
    /// Logits for the whole training split when inputs are not augmented.
    cached: Option<Tensor>,
}

/// Shared loop of supervised training and distillation. Without a teacher
/// the loss is plain cross-entropy.
fn train_classifier(
    arch: &ArchitectureSpec,
    params: &mut ParameterSet,
    mut teacher: Option<(Teacher<'_>, &DistillConfig)>,
    splits: &Splits,
    cfg: &TrainConfig,
    stage: Stage,
) -> Result<TrainReport> {
    cfg.validate()?;
    splits.validate()?;
    check_head(arch, &splits.train)?;
    let mut net = Network::new(arch)?;
    let mut opt = Optimizer::new(cfg.optimizer)?;
    let classes = arch.class_count()?;
    let initial = error_rate(&mut net, params, &splits.validation)?;
    let mut grads = params.zeros_like();
    let train = &splits.train;
    drive(cfg, stage, Metric::Misclassification, initial, params, |epoch, params| {
        let (tau, lambda) = match &teacher {
            Some((_, d)) => (d.tau, d.soft_weight(epoch)),
            None => (1.0, 0.0),
        };
        let mut total = 0.0;
        for idx in epoch_order(train.len(), cfg.seed, epoch).chunks(cfg.optimizer.batch_size) {
            let (x, y) = train_batch(train, idx, cfg, epoch)?;
            let logits = net.logits(params, &x)?;
            let targets = one_hot(&y, classes)?;
            let loss = match &mut teacher {
                Some((t, _)) => {
                    let t_logits = match &t.cached {
                        Some(all) => all.gather_rows(idx)?,
                        None => t.net.logits(t.params, &x)?,
                    };
                    kd_loss(&targets, &logits, &t_logits, tau, lambda)?
                }
                None => kd_loss(&targets, &logits, &logits, 1.0, 0.0)?,
            };
            total += loss.value * idx.len() as Scalar;
            net.logits_backward(&loss.grad, &mut grads)?;
            let mut slots: Vec<(&mut Tensor, &Tensor)> =
                params.params.iter_mut().map(|p| &mut p.tensor).zip(grads.iter()).collect();
            opt.step(epoch, &mut slots)?;
        }
        net.clear();
        let val = error_rate(&mut net, params, &splits.validation)?;
        let lambda = teacher.as_ref().map(|_| lambda);
        Ok((total / train.len() as Scalar, val, lambda))
    })
}

/// Cross-entropy training against the labels; `params` ends at the best
/// validation epoch.
pub fn train_supervised(
    arch: &ArchitectureSpec,
    params: &mut ParameterSet,
    splits: &Splits,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let mut report = train_classifier(arch, params, None, splits, cfg, Stage::Supervised)?;
    attach_test_error(&mut report, params, arch, splits)?;
    Ok(report)
}

/// Distillation of the whole student from a frozen teacher, with the
/// soft-term weight from `distill` for each epoch.
pub fn stage2_kd_train(
    student_arch: &ArchitectureSpec,
    student: &mut ParameterSet,
    teacher_arch: &ArchitectureSpec,
    teacher: &ParameterSet,
    distill: &DistillConfig,
    splits: &Splits,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    distill.validate()?;
    check_pair(teacher_arch, student_arch)?;
    let mut net = Network::new(teacher_arch)?;
    let cached = if cfg.flip_probability == 0.0 {
        Some(logits_all(&mut net, teacher, &splits.train)?)
    } else {
        None
    };
    let t = Teacher {
        net,
        params: teacher,
        cached,
    };
    let mut report = train_classifier(student_arch, student, Some((t, distill)), splits, cfg, Stage::Distill)?;
    attach_test_error(&mut report, student, student_arch, splits)?;
    Ok(report)
}

fn attach_test_error(
    report: &mut TrainReport,
    params: &ParameterSet,
    arch: &ArchitectureSpec,
    splits: &Splits,
) -> Result<()> {
    if let Some(test) = splits.test.as_ref().filter(|t| !t.is_empty()) {
        report.test_error = Some(evaluate(params, arch, test)?);
    }
    Ok(())
}

fn check_pair(teacher: &ArchitectureSpec, student: &ArchitectureSpec) -> Result<()> {
    if teacher.input != student.input || teacher.class_count()? != student.class_count()? {
        return Err(Error::Architecture(alloc::format!(
            "teacher `{}` ({} input, {} classes) and student `{}` ({} input, {} classes) are incompatible",
            teacher.name,
            teacher.input,
            teacher.class_count()?,
            student.name,
            student.input,
            student.class_count()?
        )));
    }
    Ok(())
}

/// Layer prefixes and shapes of a hint/guided pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HintSetup {
    pub pair: HintPair,
    /// Teacher layers producing the hint.
    pub teacher_prefix: usize,
    /// Student layers producing the guided output.
    pub student_prefix: usize,
    pub hint_shape: FeatureShape,
    pub guided_shape: FeatureShape,
    pub activation: BlockActivation,
}

/// Resolves and checks a hint/guided pair; fails before any training when
/// the indices are out of range or the shapes cannot be regressed.
pub fn hint_guided_shapes(teacher: &ArchitectureSpec, student: &ArchitectureSpec, pair: HintPair) -> Result<HintSetup> {
    check_pair(teacher, student)?;
    let teacher_prefix = teacher.prefix_through_conv(pair.hint)?;
    let student_prefix = student.prefix_through_conv(pair.guided)?;
    let hint_shape = Network::new(teacher)?.trace().shape_after(teacher_prefix);
    let guided_shape = Network::new(student)?.trace().shape_after(student_prefix);
    let setup = HintSetup {
        pair,
        teacher_prefix,
        student_prefix,
        hint_shape,
        guided_shape,
        activation: teacher.block_activation(pair.hint)?,
    };
    crate::distill::regressor_kernel_shape(guided_shape.spatial(), hint_shape.spatial())?;
    Ok(setup)
}

/// Trains the student layers up to the guided layer together with the
/// regressor to predict the teacher hint. Other student parameters are not
/// touched.
#[allow(clippy::too_many_arguments)]
pub fn stage1_hint_train(
    student_arch: &ArchitectureSpec,
    student: &mut ParameterSet,
    teacher_arch: &ArchitectureSpec,
    teacher: &ParameterSet,
    setup: &HintSetup,
    regressor: &mut Regressor,
    splits: &Splits,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    splits.validate()?;
    check_head(student_arch, &splits.train)?;
    if regressor.hint_shape != setup.hint_shape || regressor.guided_shape != setup.guided_shape {
        return Err(Error::Architecture(alloc::format!(
            "regressor maps {} to {}, the pair needs {} to {}",
            regressor.guided_shape,
            regressor.hint_shape,
            setup.guided_shape,
            setup.hint_shape
        )));
    }
    let mut t_net = Network::new(teacher_arch)?;
    let mut s_net = Network::new(student_arch)?;
    let t_layers = 0..setup.teacher_prefix;
    let s_layers = 0..setup.student_prefix;
    let entries = student.entries_for_layers(s_layers.clone());
    let cached = if cfg.flip_probability == 0.0 {
        Some(forward_all(&mut t_net, teacher, &splits.train, t_layers.clone())?)
    } else {
        None
    };
    let val_hints = forward_all(&mut t_net, teacher, &splits.validation, t_layers.clone())?;

    let validate = |s_net: &mut Network, student: &ParameterSet, reg: &mut Regressor| -> Result<Scalar> {
        let guided = forward_all(s_net, student, &splits.validation, s_layers.clone())?;
        let n = splits.validation.len();
        let mut total = 0.0;
        for start in (0..n).step_by(EVAL_BATCH) {
            let count = EVAL_BATCH.min(n - start);
            let r = reg.forward(&guided.slice_rows(start, count)?)?;
            total += hint_loss(&val_hints.slice_rows(start, count)?, &r)?.value * count as Scalar;
        }
        reg.clear();
        Ok(total / n as Scalar)
    };

    let initial = validate(&mut s_net, student, regressor)?;
    let mut opt = Optimizer::new(cfg.optimizer)?;
    let mut grads = student.zeros_like();
    let train = &splits.train;
    let mut state = (student.clone(), regressor.clone());
    let report = drive(cfg, Stage::Hint, Metric::HintLoss, initial, &mut state, |epoch, (params, reg)| {
        let mut total = 0.0;
        for idx in epoch_order(train.len(), cfg.seed, epoch).chunks(cfg.optimizer.batch_size) {
            let (x, _) = train_batch(train, idx, cfg, epoch)?;
            let hint = match &cached {
                Some(all) => all.gather_rows(idx)?,
                None => t_net.forward(teacher, &x, t_layers.clone())?,
            };
            let guided = s_net.forward(params, &x, s_layers.clone())?;
            let out = reg.hint_step(&hint, &guided)?;
            total += out.value * idx.len() as Scalar;
            s_net.backward(&out.guided, s_layers.clone(), &mut grads)?;
            let Regressor { weights, bias, .. } = reg;
            let mut slots: Vec<(&mut Tensor, &Tensor)> = params.params[entries.clone()]
                .iter_mut()
                .map(|p| &mut p.tensor)
                .zip(grads[entries.clone()].iter())
                .collect();
            slots.push((weights, &out.weights));
            slots.push((bias, &out.bias));
            opt.step(epoch, &mut slots)?;
        }
        s_net.clear();
        let val = validate(&mut s_net, params, reg)?;
        Ok((total / train.len() as Scalar, val, None))
    })?;
    let (best_student, best_reg) = state;
    for i in entries {
        student.params[i].tensor = best_student.params[i].tensor.clone();
    }
    *regressor = best_reg;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct FitnetOutcome {
    pub params: ParameterSet,
    pub regressor: Option<Regressor>,
    /// Stage-1 report for [`TrainMode::Ht`].
    pub hint_report: Option<TrainReport>,
    pub report: TrainReport,
}

/// Trains `student_arch` in `mode`. For [`TrainMode::Ht`]: initialize the
/// student and the regressor, pre-train up to the guided layer on the hint,
/// copy those weights into the student, then distill the whole network.
pub fn train_fitnet(
    teacher_arch: &ArchitectureSpec,
    teacher: &ParameterSet,
    student_arch: &ArchitectureSpec,
    distill: &DistillConfig,
    splits: &Splits,
    cfg: &TrainConfig,
    mode: TrainMode,
) -> Result<FitnetOutcome> {
    cfg.validate()?;
    distill.validate()?;
    let setup = match mode {
        TrainMode::Ht => {
            let pair = distill.hint.or(student_arch.hint).ok_or_else(|| {
                Error::Config(alloc::format!("`{}` declares no hint/guided pair", student_arch.name))
            })?;
            Some(hint_guided_shapes(teacher_arch, student_arch, pair)?)
        }
        _ => {
            check_pair(teacher_arch, student_arch)?;
            None
        }
    };
    let mut params = init_params(student_arch, cfg.init_halfwidth, cfg.seed)?;
    match mode {
        TrainMode::Backprop => {
            let report = train_supervised(student_arch, &mut params, splits, cfg)?;
            Ok(FitnetOutcome {
                params,
                regressor: None,
                hint_report: None,
                report,
            })
        }
        TrainMode::Kd | TrainMode::Ht => {
            let mut regressor = None;
            let mut hint_report = None;
            if let Some(setup) = setup {
                let mut reg = build_regressor(
                    setup.hint_shape,
                    setup.guided_shape,
                    setup.activation,
                    cfg.init_halfwidth,
                    cfg.seed,
                )?;
                hint_report = Some(stage1_hint_train(
                    student_arch,
                    &mut params,
                    teacher_arch,
                    teacher,
                    &setup,
                    &mut reg,
                    splits,
                    cfg,
                )?);
                regressor = Some(reg);
            }
            let report = stage2_kd_train(student_arch, &mut params, teacher_arch, teacher, distill, splits, cfg)?;
            Ok(FitnetOutcome {
                params,
                regressor,
                hint_report,
                report,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_dataset;
    use crate::netarch::LayerSpec;
    use crate::train::EarlyStopConfig;
    use alloc::vec;

    fn tiny_arch(classes: usize) -> ArchitectureSpec {
        ArchitectureSpec::new(
            "tiny",
            FeatureShape::new(1, 4, 4),
            vec![
                LayerSpec::Conv { kh: 3, kw: 3, out_channels: 4, padded: true },
                LayerSpec::Maxout { pieces: 2 },
                LayerSpec::MaxPool { wh: 2, ww: 2, oh: 0, ow: 0 },
                LayerSpec::SoftmaxHead { classes },
            ],
        )
    }

    fn splits(classes: usize) -> Splits {
        let d = synthetic_dataset(1, 300, classes, FeatureShape::new(1, 4, 4)).unwrap();
        let (train, validation) = crate::data::split(&d, 200, 100, 2).unwrap();
        Splits {
            train,
            validation,
            test: None,
        }
    }

    #[test]
    fn evaluate_boundaries() {
        let a = tiny_arch(2);
        let mut p = init_params(&a, 0.05, 1).unwrap();
        // Zero head weights and a bias favouring class 1: every prediction is 1.
        let head = p.weight_index(3).unwrap();
        p.params[head].tensor = p.params[head].tensor.zeros_like();
        p.params[head + 1].tensor = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        let data = splits(2).validation;
        let ones = data.labels().iter().filter(|&&y| y == 1).count();
        let rate = evaluate(&p, &a, &data).unwrap();
        assert_eq!(rate, 1.0 - ones as Scalar / data.len() as Scalar);
        p.params[head + 1].tensor = Tensor::zeros(&[2]).unwrap();
        let zeros = data.labels().iter().filter(|&&y| y == 0).count();
        assert_eq!(evaluate(&p, &a, &data).unwrap(), 1.0 - zeros as Scalar / data.len() as Scalar);
        assert!(evaluate(&p, &tiny_arch(3), &data).is_err());
    }

    #[test]
    fn one_epoch_boundary() {
        let a = tiny_arch(2);
        let mut p = init_params(&a, 0.05, 1).unwrap();
        let cfg = TrainConfig {
            stop: EarlyStopConfig { patience: 1, max_epochs: 1 },
            ..Default::default()
        };
        let r = train_supervised(&a, &mut p, &splits(2), &cfg).unwrap();
        assert_eq!(r.epochs.len(), 1);
    }

    #[test]
    fn supervised_learns_separable_data() {
        let a = tiny_arch(2);
        let mut p = init_params(&a, 0.05, 1).unwrap();
        let cfg = TrainConfig {
            stop: EarlyStopConfig { patience: 50, max_epochs: 50 },
            init_halfwidth: 0.05,
            ..Default::default()
        };
        let s = splits(2);
        let r = train_supervised(&a, &mut p, &s, &cfg).unwrap();
        assert!(r.best_validation <= 0.05, "{r:?}");
        assert!(evaluate(&p, &a, &s.train).unwrap() <= 0.05);
        assert_eq!(evaluate(&p, &a, &s.validation).unwrap(), r.best_validation);
        let again = {
            let mut p2 = init_params(&a, 0.05, 1).unwrap();
            train_supervised(&a, &mut p2, &s, &cfg).unwrap()
        };
        assert_eq!(r, again);
    }
}
