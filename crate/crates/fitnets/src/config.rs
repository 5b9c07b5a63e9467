//! Run configuration files.
//!
//! A sectioned `key = value` text file. `#` starts a comment. Sections:
//!
//! ```text
//! [run]        seed, out
//! [data]       source, test_source, train, validation, test, split_seed,
//!              gcn, zca, zca_epsilon, flip
//! [teacher]    arch, checkpoint
//! [student]    arch
//! [distill]    mode, tau, lambda_init, lambda_final, anneal_epochs, hint,
//!              tau_squared
//! [optimizer]  kind, learning_rate, decay, epsilon, momentum_initial,
//!              momentum_final, learning_rate_final, saturation_epoch,
//!              batch_size
//! [stop]       patience, max_epochs
//! [init]       halfwidth
//! [arch NAME]  an architecture in the layer file format
//! ```
//!
//! `arch = X` names an `[arch X]` section of the same file, a built-in
//! architecture, or an architecture file. Omitted keys take the library
//! defaults. [`RunConfig::render`] writes a self-contained canonical file that
//! parses back to an equal configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fitnets_core::distill::DistillConfig;
use fitnets_core::netarch::{ArchitectureSpec, HintPair};
use fitnets_core::train::{EarlyStopConfig, OptimizerConfig, OptimizerKind, TrainConfig, TrainMode};

use crate::archfile::{parse_arch, resolve_arch, write_arch};
use crate::dataset::DataConfig;
use crate::error::{FitError, Result};

const SECTIONS: &[(&str, &[&str])] = &[
    ("run", &["seed", "out"]),
    (
        "data",
        &[
            "source",
            "test_source",
            "train",
            "validation",
            "test",
            "split_seed",
            "gcn",
            "zca",
            "zca_epsilon",
            "flip",
        ],
    ),
    ("teacher", &["arch", "checkpoint"]),
    ("student", &["arch"]),
    (
        "distill",
        &["mode", "tau", "lambda_init", "lambda_final", "anneal_epochs", "hint", "tau_squared"],
    ),
    (
        "optimizer",
        &[
            "kind",
            "learning_rate",
            "decay",
            "epsilon",
            "momentum_initial",
            "momentum_final",
            "learning_rate_final",
            "saturation_epoch",
            "batch_size",
        ],
    ),
    ("stop", &["patience", "max_epochs"]),
    ("init", &["halfwidth"]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub arch: ArchitectureSpec,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// File name used in diagnostics.
    pub source_name: String,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub teacher: Option<ModelSection>,
    pub student: Option<ModelSection>,
    pub distill: DistillConfig,
    pub mode: TrainMode,
    /// Optimizer, early stopping, initialization, seed and flip probability.
    pub train: TrainConfig,
}

struct Entry {
    value: String,
    line: usize,
}

struct Raw<'a> {
    source: &'a str,
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
    archs: BTreeMap<String, ArchitectureSpec>,
}

impl Raw<'_> {
    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|s| s.get(key))
    }

    fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(e) => e.value.parse().map(Some).map_err(|_| {
                FitError::parse(
                    self.source,
                    e.line,
                    &format!("{section}.{key}"),
                    format!("cannot parse `{}` as {}", e.value, std::any::type_name::<T>()),
                )
            }),
        }
    }

    fn set<T: FromStr>(&self, section: &str, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(section, key)? {
            *slot = v;
        }
        Ok(())
    }

    fn line_of(&self, section: &str, key: &str) -> usize {
        self.entry(section, key).map_or(0, |e| e.line)
    }

    fn model(&self, section: &str, base: &Path) -> Result<Option<ModelSection>> {
        let Some(e) = self.entry(section, "arch") else {
            return Ok(None);
        };
        let arch = match self.archs.get(&e.value) {
            Some(a) => a.clone(),
            None => resolve_arch(&e.value, base).map_err(|err| match err {
                FitError::Usage(m) => FitError::parse(self.source, e.line, &format!("{section}.arch"), m),
                other => other,
            })?,
        };
        let checkpoint = self.entry(section, "checkpoint").map(|c| PathBuf::from(&c.value));
        Ok(Some(ModelSection { arch, checkpoint }))
    }
}

fn parse_mode(v: &str) -> Option<TrainMode> {
    match v {
        "ht" => Some(TrainMode::Ht),
        "kd" => Some(TrainMode::Kd),
        "backprop" => Some(TrainMode::Backprop),
        _ => None,
    }
}

fn parse_kind(v: &str) -> Option<OptimizerKind> {
    match v {
        "rmsprop" => Some(OptimizerKind::RmsProp),
        "sgd-momentum" => Some(OptimizerKind::SgdMomentum),
        _ => None,
    }
}

fn kind_name(k: OptimizerKind) -> &'static str {
    match k {
        OptimizerKind::RmsProp => "rmsprop",
        OptimizerKind::SgdMomentum => "sgd-momentum",
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FitError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &path.display().to_string(), &base)
    }

    pub fn parse(text: &str, source: &str, base: &Path) -> Result<Self> {
        let mut raw = Raw {
            source,
            sections: BTreeMap::new(),
            archs: BTreeMap::new(),
        };
        // Architecture bodies keep their line numbers: earlier lines are
        // blanked so diagnostics point into this file.
        let mut current: Option<String> = None;
        let mut arch_body: Option<(String, usize, String)> = None;
        let finish_arch = |body: Option<(String, usize, String)>, raw: &mut Raw| -> Result<()> {
            if let Some((name, line, text)) = body {
                let mut arch = parse_arch(&text, source)?;
                if !text.lines().any(|l| l.trim_start().starts_with("name")) {
                    arch.name = name.clone();
                }
                if raw.archs.insert(name.clone(), arch).is_some() {
                    return Err(FitError::parse(source, line, "arch", format!("duplicate architecture `{name}`")));
                }
            }
            Ok(())
        };
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                finish_arch(arch_body.take(), &mut raw)?;
                let header = header.trim();
                if let Some(name) = header.strip_prefix("arch").map(str::trim).filter(|_| header != "arch") {
                    if name.is_empty() || name.contains(char::is_whitespace) {
                        return Err(FitError::parse(source, line_no, "arch", "expected `[arch NAME]`"));
                    }
                    arch_body = Some((name.to_string(), line_no, "\n".repeat(line_no)));
                    current = None;
                } else if SECTIONS.iter().any(|(s, _)| *s == header) {
                    if raw.sections.contains_key(header) {
                        return Err(FitError::parse(source, line_no, header, "duplicate section"));
                    }
                    raw.sections.insert(header.to_string(), BTreeMap::new());
                    current = Some(header.to_string());
                } else {
                    return Err(FitError::parse(source, line_no, header, "unknown section"));
                }
                continue;
            }
            if let Some((_, _, body)) = arch_body.as_mut() {
                body.push_str(raw_line);
                body.push('\n');
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let Some(section) = current.as_ref() else {
                return Err(FitError::parse(source, line_no, line, "entry outside of any section"));
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| FitError::parse(source, line_no, line, "expected `key = value`"))?;
            let allowed = SECTIONS.iter().find(|(s, _)| s == section).map(|(_, k)| *k).unwrap_or(&[]);
            if !allowed.contains(&key) {
                return Err(FitError::parse(
                    source,
                    line_no,
                    &format!("{section}.{key}"),
                    format!("unknown key; expected one of {}", allowed.join(", ")),
                ));
            }
            let entries = raw.sections.get_mut(section).expect("section exists");
            if entries.contains_key(key) {
                return Err(FitError::parse(source, line_no, &format!("{section}.{key}"), "duplicate key"));
            }
            entries.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    line: line_no,
                },
            );
        }
        finish_arch(arch_body.take(), &mut raw)?;
        Self::build(&raw, source, base)
    }

    fn build(raw: &Raw, source: &str, base: &Path) -> Result<Self> {
        let mut data = DataConfig::default();
        data.source = raw.get("data", "source")?.unwrap_or_default();
        data.test_source = raw.get("data", "test_source")?;
        raw.set("data", "train", &mut data.train)?;
        raw.set("data", "validation", &mut data.validation)?;
        raw.set("data", "test", &mut data.test)?;
        raw.set("data", "split_seed", &mut data.split_seed)?;
        raw.set("data", "gcn", &mut data.gcn)?;
        raw.set("data", "zca", &mut data.zca)?;
        raw.set("data", "zca_epsilon", &mut data.zca_epsilon)?;
        raw.set("data", "flip", &mut data.flip)?;

        let mut optimizer = OptimizerConfig::default();
        if let Some(e) = raw.entry("optimizer", "kind") {
            optimizer.kind = parse_kind(&e.value).ok_or_else(|| {
                FitError::parse(source, e.line, "optimizer.kind", "expected `rmsprop` or `sgd-momentum`")
            })?;
        }
        raw.set("optimizer", "learning_rate", &mut optimizer.learning_rate)?;
        raw.set("optimizer", "decay", &mut optimizer.decay)?;
        raw.set("optimizer", "epsilon", &mut optimizer.epsilon)?;
        raw.set("optimizer", "momentum_initial", &mut optimizer.momentum_initial)?;
        raw.set("optimizer", "momentum_final", &mut optimizer.momentum_final)?;
        optimizer.learning_rate_final = raw.get("optimizer", "learning_rate_final")?;
        raw.set("optimizer", "saturation_epoch", &mut optimizer.saturation_epoch)?;
        raw.set("optimizer", "batch_size", &mut optimizer.batch_size)?;

        let mut stop = EarlyStopConfig::default();
        raw.set("stop", "patience", &mut stop.patience)?;
        raw.set("stop", "max_epochs", &mut stop.max_epochs)?;

        let mut train = TrainConfig {
            optimizer,
            stop,
            flip_probability: data.flip,
            ..TrainConfig::default()
        };
        raw.set("init", "halfwidth", &mut train.init_halfwidth)?;
        raw.set("run", "seed", &mut train.seed)?;

        let mut distill = DistillConfig::default();
        raw.set("distill", "tau", &mut distill.tau)?;
        raw.set("distill", "lambda_init", &mut distill.lambda_init)?;
        raw.set("distill", "lambda_final", &mut distill.lambda_final)?;
        raw.set("distill", "anneal_epochs", &mut distill.anneal_epochs)?;
        raw.set("distill", "tau_squared", &mut distill.tau_squared)?;
        if let Some(e) = raw.entry("distill", "hint") {
            let v: Vec<usize> = e
                .value
                .split_whitespace()
                .map(|t| t.parse().ok())
                .collect::<Option<_>>()
                .filter(|v: &Vec<usize>| v.len() == 2)
                .ok_or_else(|| FitError::parse(source, e.line, "distill.hint", "expected `GUIDED HINT`"))?;
            distill.hint = Some(HintPair { guided: v[0], hint: v[1] });
        }
        let mode = match raw.entry("distill", "mode") {
            Some(e) => parse_mode(&e.value).ok_or_else(|| {
                FitError::parse(source, e.line, "distill.mode", "expected `ht`, `kd` or `backprop`")
            })?,
            None => TrainMode::Ht,
        };

        let check = |r: fitnets_core::Result<()>, section: &str, key: &str| {
            r.map_err(|e| FitError::parse(source, raw.line_of(section, key), section, e.to_string()))
        };
        check(train.optimizer.validate(), "optimizer", "learning_rate")?;
        check(train.stop.validate(), "stop", "patience")?;
        check(train.validate(), "init", "halfwidth")?;
        check(distill.validate(), "distill", "tau")?;

        Ok(RunConfig {
            source_name: source.to_string(),
            base_dir: base.to_path_buf(),
            out: raw.get::<String>("run", "out")?.map(PathBuf::from),
            data,
            teacher: raw.model("teacher", base)?,
            student: raw.model("student", base)?,
            distill,
            mode,
            train,
        })
    }

    /// Canonical, self-contained text form. Architectures are embedded as
    /// `[arch NAME]` sections.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        let t = &self.train;
        let d = &self.data;
        let o = &t.optimizer;
        let di = &self.distill;
        let mut out = String::new();
        out.push_str("[run]\n");
        kv("seed", t.seed.to_string());
        if let Some(p) = &self.out {
            kv("out", p.display().to_string());
        }
        out.push_str(&std::mem::take(&mut s));
        out.push_str("\n[data]\n");
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("source", d.source.clone());
        if let Some(ts) = &d.test_source {
            kv("test_source", ts.clone());
        }
        kv("train", d.train.to_string());
        kv("validation", d.validation.to_string());
        kv("test", d.test.to_string());
        kv("split_seed", d.split_seed.to_string());
        kv("gcn", d.gcn.to_string());
        kv("zca", d.zca.to_string());
        kv("zca_epsilon", d.zca_epsilon.to_string());
        kv("flip", d.flip.to_string());
        out.push_str(&std::mem::take(&mut s));
        let mut archs: Vec<&ArchitectureSpec> = Vec::new();
        for (section, model) in [("teacher", &self.teacher), ("student", &self.student)] {
            if let Some(m) = model {
                out.push_str(&format!("\n[{section}]\narch = {}\n", m.arch.name));
                if let Some(c) = &m.checkpoint {
                    out.push_str(&format!("checkpoint = {}\n", c.display()));
                }
                if !archs.iter().any(|a| a.name == m.arch.name) {
                    archs.push(&m.arch);
                }
            }
        }
        out.push_str("\n[distill]\n");
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("mode", self.mode.name().to_string());
        kv("tau", di.tau.to_string());
        kv("lambda_init", di.lambda_init.to_string());
        kv("lambda_final", di.lambda_final.to_string());
        kv("anneal_epochs", di.anneal_epochs.to_string());
        if let Some(h) = di.hint {
            kv("hint", format!("{} {}", h.guided, h.hint));
        }
        kv("tau_squared", di.tau_squared.to_string());
        out.push_str(&std::mem::take(&mut s));
        out.push_str("\n[optimizer]\n");
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("kind", kind_name(o.kind).to_string());
        kv("learning_rate", o.learning_rate.to_string());
        kv("decay", o.decay.to_string());
        kv("epsilon", o.epsilon.to_string());
        kv("momentum_initial", o.momentum_initial.to_string());
        kv("momentum_final", o.momentum_final.to_string());
        if let Some(lr) = o.learning_rate_final {
            kv("learning_rate_final", lr.to_string());
        }
        kv("saturation_epoch", o.saturation_epoch.to_string());
        kv("batch_size", o.batch_size.to_string());
        out.push_str(&std::mem::take(&mut s));
        out.push_str(&format!(
            "\n[stop]\npatience = {}\nmax_epochs = {}\n\n[init]\nhalfwidth = {}\n",
            t.stop.patience, t.stop.max_epochs, t.init_halfwidth
        ));
        for a in archs {
            out.push_str(&format!("\n[arch {}]\n{}", a.name, write_arch(a)));
        }
        out
    }

    /// Output directory: the `--out` override, then `[run] out`, resolved
    /// against the config directory.
    pub fn out_dir(&self, overridden: Option<&Path>) -> Result<PathBuf> {
        match (overridden, &self.out) {
            (Some(p), _) => Ok(p.to_path_buf()),
            (None, Some(p)) => Ok(self.base_dir.join(p)),
            (None, None) => Err(FitError::Usage(format!(
                "{}: no output directory; set `[run] out` or pass --out",
                self.source_name
            ))),
        }
    }

    pub fn require_teacher(&self) -> Result<&ModelSection> {
        self.teacher
            .as_ref()
            .ok_or_else(|| FitError::parse(&self.source_name, 0, "teacher.arch", "missing `[teacher] arch`"))
    }

    pub fn require_student(&self) -> Result<&ModelSection> {
        self.student
            .as_ref()
            .ok_or_else(|| FitError::parse(&self.source_name, 0, "student.arch", "missing `[student] arch`"))
    }
}
