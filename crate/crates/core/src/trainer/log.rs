use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Cae,
    Segmenter,
}

/// One optimisation step. `draw_index` is the augmentation draw of the
/// first item of the batch, which pins the position in every random stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub step: u64,
    pub draw_index: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Reconstruction loss in stage 1, weighted generator loss in stage 2.
    pub total: f64,
    pub dice: f64,
    pub adversarial: f64,
    pub latent: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Mean discriminator loss over this step's D updates.
    pub discriminator: Option<f64>,
    pub elapsed_ms: u64,
}

/// Append-only training history, one JSON object per line on disk.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub checkpoints: Vec<String>,
}

impl TrainLog {
    pub fn push(&mut self, r: StepRecord) {
        self.records.push(r);
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
        self.checkpoints.extend(other.checkpoints);
    }

    /// Mean total loss of every epoch of `stage`.
    pub fn epoch_means(&self, stage: Stage) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in self.records.iter().filter(|r| r.stage == stage) {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.total;
            out[r.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 }).collect()
    }

    /// Copy with wall-clock fields cleared, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut c = self.clone();
        c.records.iter_mut().for_each(|r| r.elapsed_ms = 0);
        c
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut line = |v: serde_json::Value| -> Result<()> {
            writeln!(w, "{v}").map_err(|e| Error::io(path, e))
        };
        for r in &self.records {
            line(serde_json::to_value(r).map_err(|e| Error::Serde(e.to_string()))?)?;
        }
        for c in &self.checkpoints {
            line(serde_json::json!({ "checkpoint": c }))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut log = TrainLog::default();
        for (k, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| Error::Serde(format!("{}:{}: {e}", path.display(), k + 1)))?;
            if let Some(c) = v.get("checkpoint").and_then(|c| c.as_str()) {
                log.checkpoints.push(c.to_string());
            } else {
                log.records.push(
                    serde_json::from_value(v).map_err(|e| Error::Serde(format!("{}:{}: {e}", path.display(), k + 1)))?,
                );
            }
        }
        Ok(log)
    }
}
