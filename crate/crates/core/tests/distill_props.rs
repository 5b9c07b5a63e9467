//! Properties of the distillation losses, the regressor and the schedule.

use fitnets_core::distill::{
    build_regressor, hint_loss, kd_loss, lambda_at_epoch, one_hot, regressor_kernel_shape, regressor_param_count,
    softened_softmax, DistillConfig, RegressorKind,
};
use fitnets_core::netarch::{BlockActivation, FeatureShape};
use fitnets_core::ops::softmax_rows;
use fitnets_core::Tensor;
use proptest::prelude::*;

fn logits() -> impl Strategy<Value = Tensor> {
    (1..=5usize, 2..=10usize).prop_flat_map(|(b, k)| {
        prop::collection::vec(-20.0..20.0f64, b * k).prop_map(move |d| Tensor::new(&[b, k], d).unwrap())
    })
}

fn labels_for(t: &Tensor, seed: usize) -> Tensor {
    let (b, k) = (t.shape()[0], t.shape()[1]);
    let y: Vec<usize> = (0..b).map(|i| (i * 7 + seed) % k).collect();
    one_hot(&y, k).unwrap()
}

proptest! {
    #[test]
    fn softened_softmax_is_a_distribution_and_shift_invariant(a in logits(), tau in 1.0..8.0f64, shift in -50.0..50.0f64) {
        let p = softened_softmax(&a, tau).unwrap();
        let shifted = Tensor::new(a.shape(), a.data().iter().map(|v| v + shift).collect()).unwrap();
        let q = softened_softmax(&shifted, tau).unwrap();
        for (row, srow) in p.iter().zip(&q) {
            prop_assert!(row.as_slice().iter().all(|&v| v >= 0.0));
            prop_assert!((row.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (x, y) in row.as_slice().iter().zip(srow.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn unit_temperature_is_the_head_softmax(a in logits()) {
        let p = softened_softmax(&a, 1.0).unwrap();
        let head = softmax_rows(&a, 1.0).unwrap();
        let flat: Vec<f64> = p.iter().flat_map(|r| r.as_slice().to_vec()).collect();
        prop_assert_eq!(flat.as_slice(), head.data());
    }

    #[test]
    fn kd_loss_grows_with_lambda(s in logits(), seed in 0..10usize, tau in 1.0..5.0f64, l0 in 0.0..3.0f64, dl in 0.01..3.0f64) {
        let t = Tensor::new(s.shape(), s.data().iter().rev().copied().collect()).unwrap();
        let y = labels_for(&s, seed);
        let lo = kd_loss(&y, &s, &t, tau, l0).unwrap().value;
        let hi = kd_loss(&y, &s, &t, tau, l0 + dl).unwrap().value;
        // The soft cross-entropy is positive, so a larger weight gives a larger loss.
        prop_assert!(hi > lo);
        let ce = kd_loss(&y, &s, &t, tau, 0.0).unwrap();
        let plain = kd_loss(&y, &s, &s, 1.0, 0.0).unwrap();
        prop_assert_eq!(ce, plain);
    }

    #[test]
    fn hint_loss_is_nonnegative_and_zero_only_on_equality(
        (u, r) in (1..=3usize, 1..=3usize, 1..=4usize).prop_flat_map(|(b, c, s)| {
            let n = b * c * s * s;
            (prop::collection::vec(-3.0..3.0f64, n), prop::collection::vec(-3.0..3.0f64, n))
                .prop_map(move |(u, r)| (Tensor::new(&[b, c, s, s], u).unwrap(), Tensor::new(&[b, c, s, s], r).unwrap()))
        })
    ) {
        let out = hint_loss(&u, &r).unwrap();
        prop_assert!(out.value >= 0.0);
        prop_assert_eq!(out.value == 0.0, u == r);
        let same = hint_loss(&u, &u).unwrap();
        prop_assert_eq!(same.value, 0.0);
        prop_assert!(same.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn conv_regressor_is_cheaper_than_dense(nh in 1..=8usize, extra in 0..=8usize, oh in 1..=8usize, og in 1..=8usize) {
        let ng = nh + extra;
        let k = regressor_kernel_shape((ng, ng), (nh, nh)).unwrap();
        let conv = regressor_param_count(RegressorKind::Convolutional, (nh, nh), oh, (ng, ng), og, k);
        let fc = regressor_param_count(RegressorKind::FullyConnected, (nh, nh), oh, (ng, ng), og, k);
        if k.0 * k.1 < nh * nh * ng * ng {
            prop_assert!(conv < fc);
        }
    }

    #[test]
    fn schedule_is_linear_then_flat(init in 1.0..10.0f64, drop in 0.0..1.0f64, anneal in 1..600usize, epoch in 0..1200usize) {
        let c = DistillConfig { lambda_init: init, lambda_final: init * drop, anneal_epochs: anneal, ..Default::default() };
        let l = lambda_at_epoch(&c, epoch);
        if epoch >= anneal {
            prop_assert_eq!(l, c.lambda_final);
        } else {
            let want = init + (c.lambda_final - init) * epoch as f64 / anneal as f64;
            prop_assert!((l - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn loss_closed_forms() {
    let y = one_hot(&[0], 2).unwrap();
    let a = Tensor::new(&[1, 2], vec![1.5, -0.5]).unwrap();
    let p = softmax_rows(&a, 1.0).unwrap();
    let entropy: f64 = -p.data().iter().map(|q| q * q.ln()).sum::<f64>();
    let kd = kd_loss(&y, &a, &a, 1.0, 2.0).unwrap();
    assert!((kd.value - (-p.data()[0].ln() + 2.0 * entropy)).abs() < 1e-12);

    let u = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
    let r = Tensor::new(&[1, 1, 1, 1], vec![0.0]).unwrap();
    let h = hint_loss(&u, &r).unwrap();
    assert_eq!(h.value, 0.5);
    assert_eq!(h.grad.data(), &[-1.0]);
    assert!(hint_loss(&u, &Tensor::zeros(&[1, 1, 1, 2]).unwrap()).is_err());
}

#[test]
fn kernel_examples_and_regressor_shapes() {
    assert_eq!(regressor_kernel_shape((8, 8), (6, 6)).unwrap(), (3, 3));
    assert_eq!(regressor_kernel_shape((5, 7), (5, 7)).unwrap(), (1, 1));
    assert!(regressor_kernel_shape((4, 4), (8, 8)).is_err());
    assert_eq!(
        regressor_param_count(RegressorKind::FullyConnected, (4, 4), 3, (5, 5), 2, (0, 0)),
        2400
    );
    assert_eq!(regressor_param_count(RegressorKind::Convolutional, (4, 4), 3, (5, 5), 2, (3, 3)), 54);

    let mut r = build_regressor(
        FeatureShape::new(64, 6, 6),
        FeatureShape::new(32, 8, 8),
        BlockActivation::Maxout(2),
        0.005,
        1,
    )
    .unwrap();
    assert_eq!(r.kernel, (3, 3));
    assert_eq!(r.weights.shape(), &[128, 32, 3, 3]);
    let out = r.forward(&Tensor::full(&[2, 32, 8, 8], 0.5).unwrap()).unwrap();
    assert_eq!(out.shape(), &[2, 64, 6, 6]);

    let relu = build_regressor(FeatureShape::new(4, 5, 5), FeatureShape::new(3, 5, 5), BlockActivation::Relu, 0.05, 0)
        .unwrap();
    assert_eq!((relu.kernel, relu.weights.shape()), ((1, 1), &[4usize, 3, 1, 1][..]));
    assert!(build_regressor(FeatureShape::new(4, 6, 6), FeatureShape::new(3, 5, 5), BlockActivation::Relu, 0.05, 0)
        .is_err());
}
