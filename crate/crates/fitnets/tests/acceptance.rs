//! Acceptance criteria 1 to 10, one PASS/FAIL line each.
//!
//! Runs as a plain binary so the lines appear without `--nocapture`. Pass
//! criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p fitnets --test acceptance -- 7`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use fitnets::checkpoint::{load_checkpoint, save_checkpoint};
use fitnets::dataset::DataConfig;
use fitnets::idx::load_idx;
use fitnets_core::data::{downsample_2x, split, synthetic_dataset};
use fitnets_core::distill::{build_regressor, lambda_at_epoch, regressor_kernel_shape, DistillConfig};
use fitnets_core::gradcheck::suite::{run_suite, SUITE_OPS};
use fitnets_core::netarch::{build_paper_arch, count_mults, count_params, CompressionReport, FeatureShape};
use fitnets_core::ops::conv::{output_extent, padding_for};
use fitnets_core::ops::conv2d_forward;
use fitnets_core::train::{
    evaluate, hint_guided_shapes, init_params, stage1_hint_train, stage2_kd_train, train_fitnet, train_supervised,
    EarlyStopConfig, ParameterSet, Splits, TrainConfig, TrainMode,
};
use fitnets_core::{Error, Tensor};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn within(value: u64, target: f64, tol: f64) -> bool {
    (value as f64 - target).abs() <= tol * target
}

fn c1_gradients() -> Outcome {
    const CASES: usize = 24;
    let checks = run_suite(None, CASES, 2024, false).map_err(e2s)?;
    ensure(checks.len() == SUITE_OPS.len(), || "suite skipped ops".into())?;
    let worst = checks.iter().max_by(|a, b| a.worst.total_cmp(&b.worst)).unwrap();
    for c in &checks {
        ensure(c.passed && c.worst <= 1e-5 && c.cases >= 20, || {
            format!("{} failed: worst {:.2e} at {:?}", c.op, c.worst, c.worst_shape)
        })?;
    }
    Ok(format!("{} ops x {CASES} shapes, worst {:.2e} ({})", checks.len(), worst.worst, worst.op))
}

fn six_loop(input: &Tensor, w: &Tensor, bias: &Tensor, padded: bool) -> Vec<f64> {
    let [b, c, h, wd]: [usize; 4] = input.shape().try_into().unwrap();
    let [o, _, kh, kw]: [usize; 4] = w.shape().try_into().unwrap();
    let (ph, pw) = (padding_for(kh, padded), padding_for(kw, padded));
    let (oh, ow) = (h + 2 * ph - kh + 1, wd + 2 * pw - kw + 1);
    let mut out = vec![0.0; b * o * oh * ow];
    for n in 0..b {
        for m in 0..o {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias.data()[m];
                    for ch in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let (iy, ix) = ((y + i).wrapping_sub(ph), (x + j).wrapping_sub(pw));
                                if iy < h && ix < wd {
                                    acc += w.data()[((m * c + ch) * kh + i) * kw + j]
                                        * input.data()[((n * c + ch) * h + iy) * wd + ix];
                                }
                            }
                        }
                    }
                    out[((n * o + m) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    out
}

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0..2.0f64, n).prop_map(move |d| Tensor::new(&shape, d).unwrap())
}

fn c2_conv_oracle() -> Outcome {
    let cases = (1..=3usize, 1..=4usize, 1..=9usize, 1..=9usize, 1..=4usize, any::<bool>()).prop_flat_map(
        |(b, c, h, w, o, padded)| {
            let (mh, mw) = if padded { (5, 5) } else { (h.min(5), w.min(5)) };
            (1..=mh, 1..=mw)
                .prop_filter("kernel must fit", move |&(kh, kw)| {
                    output_extent(h, kh, padded).is_some() && output_extent(w, kw, padded).is_some()
                })
                .prop_flat_map(move |(kh, kw)| {
                    (tensor(vec![b, c, h, w]), tensor(vec![o, c, kh, kw]), tensor(vec![o]), Just(padded))
                })
        },
    );
    let mut runner = TestRunner::new_with_rng(Config::with_cases(100), TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let count = std::cell::Cell::new(0);
    let worst = std::cell::Cell::new(0.0f64);
    runner
        .run(&cases, |(input, w, b, padded)| {
            count.set(count.get() + 1);
            let got = conv2d_forward(&input, &w, &b, padded).unwrap();
            let want = six_loop(&input, &w, &b, padded);
            prop_assert_eq!(got.data().len(), want.len());
            for (g, x) in got.data().iter().zip(&want) {
                worst.set(worst.get().max((g - x).abs()));
                prop_assert!((g - x).abs() <= 1e-12);
            }
            Ok(())
        })
        .map_err(e2s)?;
    Ok(format!("{} cases, max |diff| {:.1e}", count.get(), worst.get()))
}

fn c3_regressor_sizing() -> Outcome {
    let mut pairs = 0;
    for gh in 1..=16 {
        for hh in 1..=16 {
            for gw in 1..=16 {
                for hw in 1..=16 {
                    let r = regressor_kernel_shape((gh, gw), (hh, hw));
                    if hh <= gh && hw <= gw {
                        let (kh, kw) = r.map_err(e2s)?;
                        ensure(
                            output_extent(gh, kh, false) == Some(hh) && output_extent(gw, kw, false) == Some(hw),
                            || format!("({gh},{gw}) -> ({hh},{hw}) missed"),
                        )?;
                        pairs += 1;
                    } else {
                        ensure(matches!(r, Err(Error::GuidedSmallerThanHint { .. })), || {
                            format!("({gh},{gw}) < ({hh},{hw}) accepted")
                        })?;
                    }
                }
            }
        }
    }
    Ok(format!("{pairs} valid pairs map exactly, {} smaller-guided pairs rejected", 16usize.pow(4) - pairs))
}

fn c4_counting() -> Outcome {
    let arch = |n: &str| build_paper_arch(n).map_err(e2s);
    let m30 = count_mults(&arch("fitnet-11-layer-30m")?).map_err(e2s)?;
    let m107 = count_mults(&arch("fitnet-11-layer-107m")?).map_err(e2s)?;
    let p4 = count_params(&arch("fitnet4")?).map_err(e2s)?;
    let p1 = count_params(&arch("fitnet1")?).map_err(e2s)?;
    let rate = CompressionReport::from_counts((9_000_000, 250_000), (1, 1), None).compression_rate;
    let summary = format!("11-layer mults {m30} / {m107}, FitNet 4 params {p4}, FitNet 1 params {p1}, 9M/250K rate {rate}");
    ensure(within(m30, 30e6, 0.15) && within(m107, 107e6, 0.15), || summary.clone())?;
    ensure(within(p4, 2.5e6, 0.10) && within(p1, 250e3, 0.10), || summary.clone())?;
    ensure(rate == 36.0, || summary.clone())?;
    Ok(summary)
}

fn c5_lambda() -> Outcome {
    let c = DistillConfig::default();
    let (l0, mid, end) = (lambda_at_epoch(&c, 0), lambda_at_epoch(&c, 250), lambda_at_epoch(&c, 500));
    ensure(l0 == 4.0 && end == 1.0 && mid == 2.5, || format!("{l0} {mid} {end}"))?;
    for e in 0..=500 {
        let want = 4.0 - 3.0 * e as f64 / 500.0;
        ensure((lambda_at_epoch(&c, e) - want).abs() <= 1e-12, || format!("epoch {e} off the line"))?;
    }
    Ok("4 at epoch 0, 2.5 at 250, 1 at 500, linear between".into())
}

fn synthetic_splits(seed: u64, train: usize, validation: usize) -> Result<Splits, String> {
    let all = synthetic_dataset(seed, train + validation, 10, FeatureShape::new(1, 14, 14)).map_err(e2s)?;
    let (train, validation) = split(&all, train, validation, seed).map_err(e2s)?;
    Ok(Splits { train, validation, test: None })
}

fn c6_stage1() -> Outcome {
    // Contrast-normalized like any prepared run; raw [0, 1] pixels carry a
    // DC offset that swamps the input-dependent signal at the default init.
    let data = DataConfig {
        source: "synth://6/2500/10/1x14x14".into(),
        train: 2000,
        validation: 500,
        split_seed: 6,
        gcn: true,
        ..Default::default()
    };
    let s = data.prepare(Path::new(".")).map_err(e2s)?;
    let (ta, sa) = (build_paper_arch("desk-teacher").map_err(e2s)?, build_paper_arch("desk-student").map_err(e2s)?);
    let mut teacher = init_params(&ta, 0.05, 1).map_err(e2s)?;
    let tcfg = TrainConfig { stop: EarlyStopConfig { patience: 10, max_epochs: 10 }, init_halfwidth: 0.05, ..Default::default() };
    train_supervised(&ta, &mut teacher, &s, &tcfg).map_err(e2s)?;
    let cfg = TrainConfig { stop: EarlyStopConfig { patience: 30, max_epochs: 30 }, seed: 6, ..Default::default() };
    let setup = hint_guided_shapes(&ta, &sa, sa.hint.unwrap()).map_err(e2s)?;
    let mut reg = build_regressor(setup.hint_shape, setup.guided_shape, setup.activation, cfg.init_halfwidth, cfg.seed)
        .map_err(e2s)?;
    let mut student = init_params(&sa, cfg.init_halfwidth, cfg.seed).map_err(e2s)?;
    let before: Vec<Tensor> = student.tensors().cloned().collect();
    let r = stage1_hint_train(&sa, &mut student, &ta, &teacher, &setup, &mut reg, &s, &cfg).map_err(e2s)?;
    let guided = student.entries_for_layers(0..setup.student_prefix);
    let untouched = student.tensors().zip(&before).enumerate().filter(|(i, _)| !guided.contains(i)).all(|(_, (a, b))| a == b);
    let reduction = r.initial_validation / r.best_validation;
    let summary = format!(
        "hint loss {:.3e} -> {:.3e} ({reduction:.1}x) by epoch {} of {}, {} tensors above the guided layer unchanged",
        r.initial_validation,
        r.best_validation,
        r.best_epoch,
        r.epochs.len(),
        before.len() - guided.len()
    );
    ensure(reduction >= 5.0 && r.epochs.len() <= 30 && untouched, || summary.clone())?;
    Ok(summary)
}

fn mnist_splits() -> Result<Splits, String> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-10k");
    let full = load_idx(&dir.join("images-idx3-ubyte.gz"), &dir.join("labels-idx1-ubyte.gz")).map_err(e2s)?;
    let full = downsample_2x(&full).map_err(e2s)?;
    let (pool, test) = split(&full, 6000, 2000, 0).map_err(e2s)?;
    let (train, validation) = split(&pool, 5000, 1000, 0).map_err(e2s)?;
    Ok(Splits { train, validation, test: Some(test) })
}

fn c7_ordering() -> Outcome {
    let splits = mnist_splits()?;
    let cfg = TrainConfig { stop: EarlyStopConfig { patience: 10, max_epochs: 60 }, ..Default::default() };
    let (ta, sa) = (build_paper_arch("desk-teacher").map_err(e2s)?, build_paper_arch("desk-student").map_err(e2s)?);
    let mut teacher = init_params(&ta, cfg.init_halfwidth, 0).map_err(e2s)?;
    let tr = train_supervised(&ta, &mut teacher, &splits, &cfg).map_err(e2s)?;
    let t_err = tr.test_error.unwrap();
    println!("      teacher test error {:.4}", t_err);
    let distill = DistillConfig { anneal_epochs: cfg.stop.max_epochs, ..Default::default() };
    let (mut ordered, mut ht_beats_bp) = (0, 0);
    for seed in 0..5 {
        let c = TrainConfig { seed, ..cfg };
        let mut errs = [0.0; 3];
        for (slot, mode) in [TrainMode::Backprop, TrainMode::Kd, TrainMode::Ht].into_iter().enumerate() {
            let o = train_fitnet(&ta, &teacher, &sa, &distill, &splits, &c, mode).map_err(e2s)?;
            errs[slot] = o.report.test_error.unwrap();
        }
        let [bp, kd, ht] = errs;
        let ok = ht <= kd && kd <= bp;
        ordered += usize::from(ok);
        ht_beats_bp += usize::from(ht < bp);
        println!(
            "      seed {seed}: backprop {bp:.4}  kd {kd:.4}  ht {ht:.4}  {}",
            if ok { "ordered" } else { "out of order" }
        );
    }
    let summary = format!("teacher {t_err:.4}; HT <= KD <= backprop in {ordered}/5 seeds, HT < backprop in {ht_beats_bp}/5");
    ensure(ordered >= 4 && ht_beats_bp == 5, || summary.clone())?;
    Ok(summary)
}

fn c8_degeneracies() -> Outcome {
    let s = synthetic_splits(8, 400, 100)?;
    let (ta, sa) = (build_paper_arch("desk-teacher").map_err(e2s)?, build_paper_arch("desk-student").map_err(e2s)?);
    let cfg = TrainConfig { stop: EarlyStopConfig { patience: 4, max_epochs: 4 }, init_halfwidth: 0.05, seed: 8, ..Default::default() };
    let mut teacher = init_params(&ta, 0.05, 2).map_err(e2s)?;
    train_supervised(&ta, &mut teacher, &s, &cfg).map_err(e2s)?;

    let zero = DistillConfig { lambda_init: 0.0, lambda_final: 0.0, ..Default::default() };
    let mut kd = init_params(&sa, cfg.init_halfwidth, cfg.seed).map_err(e2s)?;
    let mut sup = kd.clone();
    let r_kd = stage2_kd_train(&sa, &mut kd, &ta, &teacher, &zero, &s, &cfg).map_err(e2s)?;
    let r_sup = train_supervised(&sa, &mut sup, &s, &cfg).map_err(e2s)?;
    let curve = |r: &fitnets_core::train::TrainReport| -> Vec<(u64, u64)> {
        r.epochs.iter().map(|e| (e.train_loss.to_bits(), e.validation.to_bits())).collect()
    };
    ensure(kd == sup && curve(&r_kd) == curve(&r_sup), || "lambda = 0 diverged from supervised training".into())?;

    let d = DistillConfig { anneal_epochs: 4, ..Default::default() };
    let pure = train_fitnet(&ta, &teacher, &sa, &d, &s, &cfg, TrainMode::Kd).map_err(e2s)?;
    let mut skipped = init_params(&sa, cfg.init_halfwidth, cfg.seed).map_err(e2s)?;
    let r = stage2_kd_train(&sa, &mut skipped, &ta, &teacher, &d, &s, &cfg).map_err(e2s)?;
    ensure(pure.params == skipped && pure.report == r, || "skipping stage 1 differs from KD".into())?;
    Ok(format!(
        "lambda = 0 matches supervised bitwise over {} epochs; stage-1-skipped run equals KD",
        r_sup.epochs.len()
    ))
}

fn fitnets_cli(args: &[&str]) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_fitnets")).args(args).output().map_err(e2s)?;
    ensure(o.status.success(), || format!("`fitnets {}` failed: {}", args.join(" "), String::from_utf8_lossy(&o.stderr)))?;
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let cfg_text = "[run]\nseed = 1\nout = runs\n\n[data]\nsource = synth://9/300/10/1x14x14\ntrain = 180\nvalidation = 60\ntest = 60\n\n\
        [teacher]\narch = desk-teacher\ncheckpoint = teacher/teacher.fitn\n\n[student]\narch = desk-student\n\n\
        [distill]\nanneal_epochs = 3\n\n[optimizer]\nbatch_size = 32\n\n[stop]\npatience = 3\nmax_epochs = 3\n\n[init]\nhalfwidth = 0.05\n";
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, cfg_text).map_err(e2s)?;
    let c = cfg.to_str().unwrap();
    let run = |cmd: &str, out: &str, extra: &[&str]| -> Result<PathBuf, String> {
        let p = dir.path().join(out);
        let mut args = vec![cmd, "--config", c, "--out", p.to_str().unwrap()];
        args.extend_from_slice(extra);
        fitnets_cli(&args)?;
        Ok(p)
    };
    let same = |a: &Path, b: &Path, f: &str| -> Result<(), String> {
        let (x, y) = (std::fs::read(a.join(f)).map_err(e2s)?, std::fs::read(b.join(f)).map_err(e2s)?);
        ensure(x == y, || format!("{f} differs between reruns"))
    };
    let t1 = run("train-teacher", "teacher", &[])?;
    let t2 = run("train-teacher", "teacher-again", &[])?;
    same(&t1, &t2, "teacher.fitn")?;
    let mut checked = 1;
    for mode in ["ht", "kd", "backprop"] {
        let a = run("distill", &format!("{mode}-a"), &["--mode", mode])?;
        let b = run("distill", &format!("{mode}-b"), &["--mode", mode])?;
        same(&a, &b, "student.fitn")?;
        let ja = fitnets::report::RunReport::from_json(&std::fs::read_to_string(a.join("report.json")).map_err(e2s)?).map_err(e2s)?;
        let jb = fitnets::report::RunReport::from_json(&std::fs::read_to_string(b.join("report.json")).map_err(e2s)?).map_err(e2s)?;
        ensure(ja.checksum == jb.checksum, || format!("{mode} report checksums differ"))?;
        checked += 1;
    }

    // In-memory evaluation against save -> load -> evaluate.
    let s = synthetic_splits(9, 200, 100)?;
    let arch = build_paper_arch("desk-student").map_err(e2s)?;
    let mut params: ParameterSet = init_params(&arch, 0.05, 3).map_err(e2s)?;
    let tcfg = TrainConfig { stop: EarlyStopConfig { patience: 2, max_epochs: 2 }, ..Default::default() };
    train_supervised(&arch, &mut params, &s, &tcfg).map_err(e2s)?;
    let direct = evaluate(&params, &arch, &s.validation).map_err(e2s)?;
    let path = dir.path().join("mem.fitn");
    save_checkpoint(&path, &arch, &params).map_err(e2s)?;
    let (arch2, params2) = load_checkpoint(&path).map_err(e2s)?;
    let reloaded = evaluate(&params2, &arch2, &s.validation).map_err(e2s)?;
    ensure(params2 == params && direct.to_bits() == reloaded.to_bits(), || {
        format!("reloaded evaluation {reloaded} != {direct}")
    })?;
    Ok(format!(
        "{checked} commands rerun with byte-identical checkpoints; reload evaluates to {direct:.4} exactly"
    ))
}

struct Criterion {
    id: usize,
    title: &'static str,
    budget_s: f64,
    run: fn() -> Outcome,
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria = [
        Criterion { id: 1, title: "gradient correctness", budget_s: 120.0, run: c1_gradients },
        Criterion { id: 2, title: "convolution oracle", budget_s: 10.0, run: c2_conv_oracle },
        Criterion { id: 3, title: "regressor sizing law", budget_s: 5.0, run: c3_regressor_sizing },
        Criterion { id: 4, title: "counting against published figures", budget_s: 1.0, run: c4_counting },
        Criterion { id: 5, title: "lambda schedule endpoints", budget_s: 1.0, run: c5_lambda },
        Criterion { id: 6, title: "stage-1 effectiveness", budget_s: 300.0, run: c6_stage1 },
        Criterion { id: 7, title: "desk-scale distillation ordering", budget_s: 1800.0, run: c7_ordering },
        Criterion { id: 8, title: "pipeline degeneracies", budget_s: 120.0, run: c8_degeneracies },
        Criterion { id: 9, title: "determinism and round-trips", budget_s: 120.0, run: c9_determinism },
    ];
    let mut failures = 0;
    let mut substitutes_ok = true;
    for c in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let started = Instant::now();
        let result = (c.run)();
        let secs = started.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(d) if secs <= c.budget_s => (true, d),
            Ok(d) => (false, format!("{d}; over the {:.0} s budget", c.budget_s)),
            Err(e) => (false, e),
        };
        println!(
            "{} {:>2} {}: {detail} ({secs:.1} s, budget {:.0} s)",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.title,
            c.budget_s
        );
        failures += usize::from(!pass);
        substitutes_ok &= pass;
    }
    if only.is_empty() || only.contains(&10) {
        // Full-scale results are out of scope; criteria 1-9 stand in for them.
        let ran_all = only.is_empty() || (1..=9).all(|i| only.contains(&i));
        let pass = ran_all && substitutes_ok;
        println!(
            "{} 10 full-scale results out of scope: {}",
            if pass { "PASS" } else { "FAIL" },
            if !ran_all {
                "needs criteria 1-9 in the same run"
            } else if pass {
                "criteria 1-9 stand in and all passed"
            } else {
                "a substitute criterion failed"
            }
        );
        failures += usize::from(!pass);
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
