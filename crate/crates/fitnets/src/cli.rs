//! The `fitnets` command line.
//!
//! Exit codes: 0 success, 1 verification or training failure, 2 usage or
//! configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fitnets_core::gradcheck::suite::run_suite;
use fitnets_core::netarch::{count_mults, count_params, speedup_and_compression, ArchitectureSpec, HintPair};
use fitnets_core::train::{evaluate, hint_guided_shapes, init_params, predict, train_fitnet, train_supervised, TrainMode};

use crate::archfile::resolve_arch;
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::dataset::load_uri;
use crate::error::{FitError, Result};
use crate::report::{write_atomic, EvalRecord, RunReport, StageRecord, SCHEMA_VERSION};

#[derive(Parser, Debug)]
#[command(name = "fitnets", version, about = "Hint-based distillation of thin deep networks")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a teacher with plain supervised learning.
    TrainTeacher(RunArgs),
    /// Train a student from a teacher checkpoint.
    Distill {
        #[command(flatten)]
        run: RunArgs,
        /// Overrides `[distill] mode`.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Layer, parameter and multiplication counts. The first architecture is
    /// the teacher the others are compared against.
    Inspect {
        #[arg(required = true)]
        archs: Vec<String>,
        /// Also time the forward pass of each architecture.
        #[arg(long)]
        time: bool,
        /// Dataset URI for `--time`; defaults to 256 synthetic examples.
        #[arg(long)]
        data: Option<String>,
        /// Write inspect.txt and inspect.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Misclassification rate of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset URI.
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        data: Option<String>,
        /// Evaluate on the test split this config prepares.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for eval.json; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of every differentiable op.
    Gradcheck {
        /// Check a single op.
        #[arg(long)]
        op: Option<String>,
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Double every analytic gradient; the checks must then fail.
        #[arg(long)]
        corrupt: bool,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `[run] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `[run] out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Ht,
    Kd,
    Backprop,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ht => TrainMode::Ht,
            ModeArg::Kd => TrainMode::Kd,
            ModeArg::Backprop => TrainMode::Backprop,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainTeacher(a) => train_teacher(&a),
        Command::Distill { run, mode } => distill(&run, mode.map(Into::into)),
        Command::Inspect { archs, time, data, out } => inspect(&archs, time, data.as_deref(), out.as_deref()),
        Command::Eval {
            checkpoint,
            data,
            config,
            seed,
            out,
        } => eval(&checkpoint, data.as_deref(), config.as_deref(), seed, out.as_deref()),
        Command::Gradcheck { op, cases, seed, corrupt } => gradcheck(op.as_deref(), cases, seed, corrupt),
    }
}

fn load_config(a: &RunArgs) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let out = cfg.out_dir(a.out.as_deref())?;
    Ok((cfg, out))
}

fn finish(cfg: &RunConfig, out: &Path, report: RunReport) -> Result<()> {
    write_atomic(&out.join("config.txt"), cfg.render().as_bytes())?;
    report.write_all(out)?;
    print!("{}", report.to_text());
    Ok(())
}

fn train_teacher(a: &RunArgs) -> Result<()> {
    let (cfg, out) = load_config(a)?;
    let arch = &cfg.require_teacher()?.arch;
    let splits = cfg.data.prepare(&cfg.base_dir)?;
    let started = Instant::now();
    let mut params = init_params(arch, cfg.train.init_halfwidth, cfg.train.seed)?;
    let mut train = train_supervised(arch, &mut params, &splits, &cfg.train)?;
    let seconds = started.elapsed().as_secs_f64();
    train.wall_clock_seconds = Some(seconds);
    save_checkpoint(&out.join("teacher.fitn"), arch, &params)?;
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        command: "train-teacher".into(),
        mode: None,
        seed: cfg.train.seed,
        architecture: arch.name.clone(),
        teacher: None,
        test_error: train.test_error.map(f64::from),
        stages: vec![StageRecord::from(&train)],
        wall_clock_seconds: Some(seconds),
        checksum: String::new(),
    }
    .seal();
    finish(&cfg, &out, report)
}

fn distill(a: &RunArgs, mode: Option<TrainMode>) -> Result<()> {
    let (mut cfg, out) = load_config(a)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    let student = cfg.require_student()?.arch.clone();
    let teacher_cfg = cfg.require_teacher()?;
    let ckpt = teacher_cfg.checkpoint.as_ref().ok_or_else(|| {
        FitError::parse(&cfg.source_name, 0, "teacher.checkpoint", "distill needs `[teacher] checkpoint`")
    })?;
    let (teacher_arch, teacher) = load_checkpoint(&cfg.base_dir.join(ckpt))?;
    if teacher_arch.layers != teacher_cfg.arch.layers || teacher_arch.input != teacher_cfg.arch.input {
        return Err(FitError::Usage(format!(
            "teacher checkpoint holds `{}`, which differs from the configured `{}`",
            teacher_arch.name, teacher_cfg.arch.name
        )));
    }
    // Incompatible hint/guided pairs are reported before any data is loaded.
    if cfg.mode == TrainMode::Ht {
        let pair: HintPair = cfg.distill.hint.or(student.hint).ok_or_else(|| {
            FitError::parse(&cfg.source_name, 0, "distill.hint", format!("`{}` declares no hint pair", student.name))
        })?;
        hint_guided_shapes(&teacher_arch, &student, pair)?;
    }
    let splits = cfg.data.prepare(&cfg.base_dir)?;
    let started = Instant::now();
    let outcome = train_fitnet(&teacher_arch, &teacher, &student, &cfg.distill, &splits, &cfg.train, cfg.mode)?;
    let seconds = started.elapsed().as_secs_f64();
    save_checkpoint(&out.join("student.fitn"), &student, &outcome.params)?;
    let mut stages: Vec<StageRecord> = outcome.hint_report.iter().map(StageRecord::from).collect();
    stages.push(StageRecord::from(&outcome.report));
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        command: "distill".into(),
        mode: Some(cfg.mode.name().into()),
        seed: cfg.train.seed,
        architecture: student.name.clone(),
        teacher: Some(teacher_arch.name.clone()),
        test_error: outcome.report.test_error.map(f64::from),
        stages,
        wall_clock_seconds: Some(seconds),
        checksum: String::new(),
    }
    .seal();
    finish(&cfg, &out, report)
}

/// Seconds for one forward pass over `uri` (or synthetic data matching the
/// architecture) with freshly initialized weights.
fn time_forward(arch: &ArchitectureSpec, uri: Option<&str>) -> Result<f64> {
    let data = match uri {
        Some(u) => load_uri(u, Path::new("."))?,
        None => fitnets_core::data::synthetic_dataset(0, 256, arch.class_count()?.max(2), arch.input)?,
    };
    let params = init_params(arch, 0.005, 0)?;
    let started = Instant::now();
    predict(&params, arch, &data)?;
    Ok(started.elapsed().as_secs_f64())
}

fn inspect(refs: &[String], time: bool, data: Option<&str>, out: Option<&Path>) -> Result<()> {
    let archs: Vec<ArchitectureSpec> = refs
        .iter()
        .map(|r| resolve_arch(r, Path::new(".")))
        .collect::<Result<_>>()?;
    let timings: Vec<Option<f64>> = archs
        .iter()
        .map(|a| time.then(|| time_forward(a, data)).transpose())
        .collect::<Result<_>>()?;
    let pair = archs.len() > 1;
    let mut header = vec!["name", "layers", "params", "mults"];
    if time {
        header.push("forward_s");
    }
    if pair {
        header.extend(["compression", "speedup"]);
        if time {
            header.push("measured_speedup");
        }
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, a) in archs.iter().enumerate() {
        let mut row = vec![
            a.name.clone(),
            a.depth().to_string(),
            count_params(a)?.to_string(),
            count_mults(a)?.to_string(),
        ];
        if let Some(t) = timings[i] {
            row.push(format!("{t:.4}"));
        }
        if pair {
            let timing = timings[0].zip(timings[i]);
            let r = speedup_and_compression(&archs[0], a, timing)?;
            row.push(format!("{:.2}", r.compression_rate));
            row.push(format!("{:.2}", r.analytic_speedup));
            if let Some(m) = r.measured_speedup {
                row.push(format!("{m:.2}"));
            }
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| {
        let mut s = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect::<Vec<_>>()
            .join("  ");
        s.push('\n');
        s
    };
    let mut text = line(header.clone());
    let mut csv = header.join(",") + "\n";
    for r in &rows {
        text.push_str(&line(r.iter().map(String::as_str).collect()));
        csv.push_str(&r.join(","));
        csv.push('\n');
    }
    print!("{text}");
    if let Some(dir) = out {
        write_atomic(&dir.join("inspect.txt"), text.as_bytes())?;
        write_atomic(&dir.join("inspect.csv"), csv.as_bytes())?;
    }
    Ok(())
}

fn eval(
    checkpoint: &Path,
    data: Option<&str>,
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<()> {
    let (arch, params) = load_checkpoint(checkpoint)?;
    let (dataset, name, cfg_seed) = match (data, config) {
        (Some(uri), _) => (load_uri(uri, Path::new("."))?, uri.to_string(), 0),
        (None, Some(path)) => {
            let cfg = RunConfig::load(path)?;
            let splits = cfg.data.prepare(&cfg.base_dir)?;
            let test = splits
                .test
                .ok_or_else(|| FitError::Usage(format!("{}: the config defines no test split", path.display())))?;
            let name = cfg.data.test_source.clone().unwrap_or_else(|| format!("{} (test split)", cfg.data.source));
            (test, name, cfg.train.seed)
        }
        (None, None) => return Err(FitError::Usage("eval needs --data or --config".into())),
    };
    let error = evaluate(&params, &arch, &dataset)?;
    let record = EvalRecord {
        schema_version: SCHEMA_VERSION,
        checkpoint: checkpoint.display().to_string(),
        dataset: name,
        error: error as f64,
        n: dataset.len(),
        seed: seed.unwrap_or(cfg_seed),
    };
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let mut json = serde_json::to_string_pretty(&record).expect("record serializes");
    json.push('\n');
    write_atomic(&dir.join("eval.json"), json.as_bytes())?;
    println!("{error:.4}");
    Ok(())
}

fn gradcheck(op: Option<&str>, cases: usize, seed: u64, corrupt: bool) -> Result<()> {
    if cases == 0 {
        return Err(FitError::Usage("--cases must be at least 1".into()));
    }
    let checks = run_suite(op, cases, seed, corrupt)?;
    let mut failed = 0;
    for c in &checks {
        println!(
            "{:<16} {:>3} cases  worst {:.3e} at {:?}  {}",
            c.op,
            c.cases,
            c.worst,
            c.worst_shape,
            if c.passed { "pass" } else { "FAIL" }
        );
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(FitError::Verification(format!("{failed} of {} ops failed the gradient check", checks.len())));
    }
    println!("all {} ops pass", checks.len());
    Ok(())
}
