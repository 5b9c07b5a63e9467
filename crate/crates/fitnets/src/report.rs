//! Run reports in JSON, CSV and text, and atomic file output.
//!
//! The JSON report carries a `checksum`: SHA-256 over the report serialized
//! with its wall-clock fields and the checksum itself cleared, so reruns of
//! the same configuration produce the same checksum.

use std::io::Write;
use std::path::Path;

use fitnets_core::train::TrainReport;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FitError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| FitError::io(dir, e))?;
    }
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(FitError::io(path, e));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: f64,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub metric: String,
    pub seed: u64,
    pub initial_validation: f64,
    pub best_epoch: usize,
    pub best_validation: f64,
    pub stop_reason: String,
    pub test_error: Option<f64>,
    pub wall_clock_seconds: Option<f64>,
    pub epochs: Vec<EpochRow>,
}

impl From<&TrainReport> for StageRecord {
    fn from(r: &TrainReport) -> Self {
        StageRecord {
            stage: r.stage.name().to_string(),
            metric: r.metric.name().to_string(),
            seed: r.seed,
            initial_validation: r.initial_validation as f64,
            best_epoch: r.best_epoch,
            best_validation: r.best_validation as f64,
            stop_reason: r.stop_reason.name().to_string(),
            test_error: r.test_error.map(|v| v as f64),
            wall_clock_seconds: r.wall_clock_seconds,
            epochs: r
                .epochs
                .iter()
                .map(|e| EpochRow {
                    epoch: e.epoch,
                    train_loss: e.train_loss as f64,
                    validation: e.validation as f64,
                    lambda: e.lambda.map(|l| l as f64),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    /// `ht`, `kd` or `backprop` for distillation runs.
    pub mode: Option<String>,
    pub seed: u64,
    pub architecture: String,
    pub teacher: Option<String>,
    /// Misclassification of the returned parameters on the test split.
    pub test_error: Option<f64>,
    pub stages: Vec<StageRecord>,
    pub wall_clock_seconds: Option<f64>,
    pub checksum: String,
}

impl RunReport {
    fn canonical(&self) -> RunReport {
        let mut c = self.clone();
        c.checksum = String::new();
        c.wall_clock_seconds = None;
        for s in &mut c.stages {
            s.wall_clock_seconds = None;
        }
        c
    }

    /// SHA-256 of the report without wall-clock fields or checksum.
    pub fn compute_checksum(&self) -> String {
        let json = serde_json::to_vec(&self.canonical()).expect("report serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn seal(mut self) -> Self {
        self.checksum = self.compute_checksum();
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| FitError::Usage(format!("report JSON: {e}")))
    }

    /// One row per epoch of every stage.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,epoch,train_loss,validation_metric,validation,lambda\n");
        for s in &self.stages {
            for e in &s.epochs {
                let lambda = e.lambda.map(|l| l.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    s.stage, e.epoch, e.train_loss, s.metric, e.validation, lambda
                ));
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} `{}`", self.command, self.architecture);
        if let Some(m) = &self.mode {
            out.push_str(&format!(" mode {m}"));
        }
        if let Some(t) = &self.teacher {
            out.push_str(&format!(" teacher `{t}`"));
        }
        out.push_str(&format!(" seed {}\n", self.seed));
        for s in &self.stages {
            out.push_str(&format!(
                "  {:<10} {} epochs, best epoch {} {} {:.4} (initial {:.4}), stopped by {}\n",
                s.stage,
                s.epochs.len(),
                s.best_epoch,
                s.metric,
                s.best_validation,
                s.initial_validation,
                s.stop_reason
            ));
        }
        if let Some(e) = self.test_error {
            out.push_str(&format!("  test error {e:.4}\n"));
        }
        if let Some(w) = self.wall_clock_seconds {
            out.push_str(&format!("  wall clock {w:.1}s\n"));
        }
        out.push_str(&format!("  checksum {}\n", self.checksum));
        out
    }

    /// Writes `report.json`, `report.csv` and `report.txt` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("report.json"), self.to_json().as_bytes())?;
        write_atomic(&dir.join("report.csv"), self.to_csv().as_bytes())?;
        write_atomic(&dir.join("report.txt"), self.to_text().as_bytes())
    }
}

/// Machine-readable result of `fitnets eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub schema_version: u32,
    pub checkpoint: String,
    pub dataset: String,
    pub error: f64,
    pub n: usize,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunReport {
        RunReport {
            schema_version: SCHEMA_VERSION,
            command: "train-teacher".into(),
            mode: None,
            seed: 3,
            architecture: "desk-teacher".into(),
            teacher: None,
            test_error: Some(0.25),
            stages: vec![StageRecord {
                stage: "supervised".into(),
                metric: "validation_error".into(),
                seed: 3,
                initial_validation: 0.9,
                best_epoch: 1,
                best_validation: 0.2,
                stop_reason: "max_epochs".into(),
                test_error: Some(0.25),
                wall_clock_seconds: Some(1.5),
                epochs: vec![
                    EpochRow { epoch: 0, train_loss: 2.0, validation: 0.5, lambda: None },
                    EpochRow { epoch: 1, train_loss: 1.0, validation: 0.2, lambda: Some(4.0) },
                ],
            }],
            wall_clock_seconds: Some(2.0),
            checksum: String::new(),
        }
        .seal()
    }

    #[test]
    fn checksum_ignores_wall_clock() {
        let a = sample();
        let mut b = a.clone();
        b.wall_clock_seconds = Some(99.0);
        b.stages[0].wall_clock_seconds = None;
        assert_eq!(a.checksum, b.compute_checksum());
        b.stages[0].epochs[0].train_loss = 2.5;
        assert_ne!(a.checksum, b.compute_checksum());
        assert_eq!(a.checksum.len(), 64);
    }

    #[test]
    fn json_round_trip_and_csv() {
        let a = sample();
        assert_eq!(RunReport::from_json(&a.to_json()).unwrap(), a);
        let csv = a.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().ends_with(",4"));
        assert!(a.to_text().contains("test error 0.2500"));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/file.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
