//! The desk-scale restoration protocol: a fixed MNIST subset, factor-4
//! degradation, short training runs and an external probe.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{load_mnist, make_pairs, Dataset, DegradeConfig, PairSet};
use crate::error::Result;
use crate::models::ModelKind;
use crate::train::{
    detect_balance, train, EvalReport, ExternalProbe, Probe, ProbeConfig, SweepEvaluator, TrainConfig, TrainingLog,
};

#[derive(Clone, Debug, PartialEq)]
pub struct DeskProtocol {
    /// Directory holding `train-images-idx3-ubyte` and `train-labels-idx1-ubyte`.
    pub data_dir: PathBuf,
    pub train_size: usize,
    pub eval_size: usize,
    pub split_seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub factor: usize,
    pub eval_window: usize,
    pub probe: ProbeConfig,
}

impl DeskProtocol {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            train_size: 2000,
            eval_size: 500,
            split_seed: 0,
            epochs: 30,
            batch_size: 64,
            factor: 4,
            eval_window: 5,
            probe: ProbeConfig::default(),
        }
    }

    pub fn degrade_config(&self) -> DegradeConfig {
        DegradeConfig { factor: self.factor, ..DegradeConfig::default() }
    }

    pub fn train_config(&self, kind: ModelKind, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::new(kind);
        c.epochs = self.epochs;
        c.batch_size = self.batch_size;
        c.seed = seed;
        c.degrade = self.degrade_config();
        c.eval_window = self.eval_window;
        c
    }

    /// Loads and splits the data, fits the probe on the real training images
    /// and scores it on real and coarse held-out images.
    pub fn prepare(&self) -> Result<DeskData> {
        let dir: &Path = &self.data_dir;
        let all = load_mnist(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?;
        let (train, eval) = all.split(self.train_size, self.eval_size, self.split_seed)?;
        let eval_pairs = make_pairs(&eval, &self.degrade_config())?;
        let mut probe = ExternalProbe::fit(&train.images, &train.attributes, self.probe)?;
        let real_accuracy = probe.accuracy(&eval_pairs.fine, &eval_pairs.attributes)?;
        let coarse_accuracy = probe.accuracy(&eval_pairs.coarse, &eval_pairs.attributes)?;
        Ok(DeskData { train, eval_pairs, probe, real_accuracy, coarse_accuracy })
    }

    /// Trains one model and evaluates it over the final `eval_window` epochs.
    pub fn run(&self, data: &DeskData, kind: ModelKind, seed: u64) -> Result<DeskRun> {
        let config = self.train_config(kind, seed);
        let start = Instant::now();
        let probe = Probe::External(Box::new(data.probe.clone()));
        let mut sweep = SweepEvaluator::new(data.eval_pairs.clone(), probe, "mnist", config.epochs, config.eval_window);
        let (_, log) = train(&config, &data.train, &mut sweep)?;
        Ok(DeskRun {
            kind,
            seed,
            balance: detect_balance(&log),
            report: sweep.average()?,
            window: sweep.reports().to_vec(),
            log,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

pub struct DeskData {
    pub train: Dataset,
    pub eval_pairs: PairSet,
    pub probe: ExternalProbe,
    /// Probe accuracy on the real held-out images.
    pub real_accuracy: f64,
    /// Probe accuracy on their coarse versions.
    pub coarse_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct DeskRun {
    pub kind: ModelKind,
    pub seed: u64,
    pub log: TrainingLog,
    /// Mean of `window`.
    pub report: EvalReport,
    /// One report per evaluated final epoch.
    pub window: Vec<EvalReport>,
    pub balance: Option<usize>,
    pub seconds: f64,
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// A `loss/accuracy` cell: loss to two decimals, accuracy to three with the
/// leading zero dropped, as in `1.98/.938`.
pub fn table_cell(loss: f64, accuracy: f64) -> String {
    let acc = format!("{accuracy:.3}");
    let acc = acc.strip_prefix('0').unwrap_or(&acc);
    format!("{loss:.2}/{acc}")
}

/// Aligned plain-text table: a header row, then one row per label.
pub fn render_table(corner: &str, columns: &[String], rows: &[(String, Vec<String>)]) -> String {
    let mut widths = vec![corner.len().max(rows.iter().map(|r| r.0.len()).max().unwrap_or(0))];
    for (j, c) in columns.iter().enumerate() {
        widths.push(c.len().max(rows.iter().map(|r| r.1.get(j).map_or(0, String::len)).max().unwrap_or(0)));
    }
    let line = |first: &str, cells: &mut dyn Iterator<Item = &str>| {
        let mut s = format!("{first:<w$}", w = widths[0]);
        for (k, c) in cells.enumerate() {
            s.push_str(&format!("  {c:>w$}", w = widths[k + 1]));
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(corner, &mut columns.iter().map(String::as_str));
    for (label, cells) in rows {
        out.push_str(&line(label, &mut cells.iter().map(String::as_str)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_and_tables() {
        assert_eq!(table_cell(1.9849, 0.9381), "1.98/.938");
        assert_eq!(table_cell(0.5, 1.0), "0.50/1.000");
        let t = render_table("model", &["mnist".into()], &[("GAN".into(), vec!["1.00/.100".into()]), ("ResGAN".into(), vec!["diverged".into()])]);
        assert_eq!(t, "model       mnist\nGAN     1.00/.100\nResGAN   diverged\n");
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0]), 2.5);
    }
}
