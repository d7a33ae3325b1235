//! `metrics.jsonl` records and `curve.json` loss curves.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use apollo_core::{LossCurve, MetricSink, StepRecord};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub step: usize,
    /// 0-based epoch containing this step.
    pub epoch: usize,
    pub stage: usize,
    pub n_slots: usize,
    pub sampled_depth: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub grad_mean: f64,
    pub grad_std: f64,
    pub cum_flops: u64,
    /// Milliseconds since the run started.
    pub wall_ms: u64,
}

impl MetricsRecord {
    pub fn new(r: &StepRecord, val_loss: Option<f64>, steps_per_epoch: usize, wall_ms: u64) -> Self {
        Self {
            step: r.step,
            epoch: (r.step - 1) / steps_per_epoch.max(1),
            stage: r.stage,
            n_slots: r.n_slots,
            sampled_depth: r.depth,
            train_loss: r.train_loss,
            val_loss,
            grad_mean: r.grad_mean,
            grad_std: r.grad_std,
            cum_flops: r.cum_flops,
            wall_ms,
        }
    }
}

/// Writes one JSON line per step and keeps the records in memory.
pub struct JsonlSink<W: Write> {
    writer: W,
    steps_per_epoch: usize,
    start: Instant,
    pub records: Vec<MetricsRecord>,
    pub halt: Option<apollo_core::Error>,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(writer: W, steps_per_epoch: usize) -> Self {
        Self {
            writer,
            steps_per_epoch,
            start: Instant::now(),
            records: Vec::new(),
            halt: None,
        }
    }

    pub fn into_inner(self) -> W {
        self.writer
    }
}

impl<W: Write> MetricSink for JsonlSink<W> {
    type Error = std::io::Error;

    fn record(&mut self, record: &StepRecord, val_loss: Option<f64>) -> std::io::Result<()> {
        let wall_ms = self.start.elapsed().as_millis() as u64;
        let rec = MetricsRecord::new(record, val_loss, self.steps_per_epoch, wall_ms);
        serde_json::to_writer(&mut self.writer, &rec)?;
        self.writer.write_all(b"\n")?;
        self.records.push(rec);
        Ok(())
    }

    fn halted(&mut self, error: &apollo_core::Error) -> std::io::Result<()> {
        self.halt = Some(error.clone());
        self.writer.flush()
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .map(|l| {
            serde_json::from_str(l).map_err(|e| HarnessError::Json {
                path: path.to_path_buf(),
                source: e,
            })
        })
        .collect()
}

pub fn write_curve(path: &Path, curve: &LossCurve) -> Result<()> {
    let pairs: Vec<[f64; 2]> = curve.points().iter().map(|&(f, l)| [f, l]).collect();
    write_json(path, &pairs)
}

pub fn read_curve(path: &Path) -> Result<LossCurve> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let pairs: Vec<[f64; 2]> = serde_json::from_str(&text).map_err(|e| HarnessError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(LossCurve::from_points(pairs.into_iter().map(|[f, l]| (f, l)).collect())?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}
