//! Per-epoch training records, the metrics CSV, and balance-point detection.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

pub const METRICS_HEADER: &str = "epoch,loss_g,loss_d,accuracy,wall_ms";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_g: f64,
    pub loss_d: f64,
    pub accuracy: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    /// Identity of the configuration that produced the log.
    pub config_hash: String,
    pub seed: u64,
}

impl TrainingLog {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self { records: Vec::new(), config_hash: config_hash.into(), seed }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn loss_g(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss_g).collect()
    }

    pub fn loss_d(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss_d).collect()
    }

    /// Builds a log from loss curves alone, for analysis and tests.
    pub fn from_losses(loss_g: &[f64], loss_d: &[f64]) -> Self {
        let records = loss_g
            .iter()
            .zip(loss_d)
            .enumerate()
            .map(|(epoch, (&loss_g, &loss_d))| EpochRecord { epoch, loss_g, loss_d, accuracy: 0.0, wall_ms: 0 })
            .collect();
        Self { records, ..Self::default() }
    }
}

/// First epoch at which the sign of `loss_g − loss_d` differs from the
/// previous epoch's. Training is not stopped there; this only reports it.
pub fn detect_balance(log: &TrainingLog) -> Option<usize> {
    let sign = |r: &EpochRecord| (r.loss_g - r.loss_d).partial_cmp(&0.0);
    log.records
        .windows(2)
        .find(|w| sign(&w[0]) != sign(&w[1]))
        .map(|w| w[1].epoch)
}

/// Writes `epoch,loss_g,loss_d,accuracy,wall_ms` rows, flushing after each.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn append(&mut self, r: &EpochRecord) -> Result<()> {
        writeln!(self.out, "{}", format_row(r))?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn format_row(r: &EpochRecord) -> String {
    format!("{},{},{},{},{}", r.epoch, r.loss_g, r.loss_d, r.accuracy, r.wall_ms)
}

/// Renders a whole log as CSV text, header included.
pub fn metrics_csv(log: &TrainingLog) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in &log.records {
        s.push_str(&format_row(r));
        s.push('\n');
    }
    s
}
