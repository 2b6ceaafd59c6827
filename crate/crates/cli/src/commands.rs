use std::fs;
use std::path::{Path, PathBuf};

use resgan_core::data::{
    byte_to_unit, degrade as degrade_images, load_cifar, load_mnist, make_pairs, synth_dataset, unit_to_byte, CifarSplit,
    Dataset, IdxArray, PairSet,
};
use resgan_core::experiment::{median, render_table, table_cell};
use resgan_core::image::{ImageGrid, Pnm};
use resgan_core::models::{generate, Checkpoint, ImageShape, ModelKind};
use resgan_core::train::{
    evaluate, generate_all, train as run_training, EpochRecord, EpochSink, EvalReport, ExternalProbe, MetricsWriter,
    Probe, SweepEvaluator, TrainConfig, Trainer,
};
use resgan_core::{Error, Tensor};
use serde_json::json;

use crate::config::{ProbeChoice, RunConfig};
use crate::{CliError, Common};

const CHECKPOINT_FILE: &str = "checkpoint.rgan";

fn resolve(c: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = RunConfig::load(c.config.as_deref(), &c.overrides)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    let root = c
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .or_else(|| std::env::var_os("RESGAN_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let dir = root.join(cfg.hash());
    fs::create_dir_all(&dir)?;
    Ok((cfg, dir))
}

fn load_dataset(cfg: &RunConfig, name: &str) -> Result<Dataset, CliError> {
    if name == "synth" {
        let shape = ImageShape::new(cfg.synth_channels, cfg.synth_height, cfg.synth_width);
        return Ok(synth_dataset(cfg.train_size + cfg.eval_size, shape, cfg.synth_classes, cfg.split_seed)?);
    }
    let dir = cfg
        .dataset_dir(name)
        .ok_or_else(|| CliError::Config(format!("dataset `{name}` needs a directory (data_dir or {name}_dir)")))?;
    if name == "mnist" {
        return Ok(load_mnist(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?);
    }
    let variant = RunConfig::cifar_variant(name)
        .ok_or_else(|| CliError::Config(format!("unknown dataset `{name}` (expected mnist, cifar10, cifar100 or synth)")))?;
    let split = match cfg.split.as_str() {
        "train" => CifarSplit::Train,
        "test" => CifarSplit::Test,
        other => return Err(CliError::Config(format!("split must be `train` or `test`, got `{other}`"))),
    };
    Ok(load_cifar(dir, variant, split)?)
}

fn split(cfg: &RunConfig, ds: &Dataset) -> Result<(Dataset, Dataset), CliError> {
    Ok(ds.split(cfg.train_size, cfg.eval_size, cfg.split_seed)?)
}

fn build_probe(cfg: &RunConfig, kind: ModelKind, train: &Dataset) -> Result<Probe, CliError> {
    match cfg.probe_choice()? {
        ProbeChoice::Embedded if kind != ModelKind::Resgan => Err(CliError::Config(format!(
            "{kind} has no attribute outputs; the embedded probe applies to resgan only"
        ))),
        ProbeChoice::Embedded => Ok(Probe::Embedded),
        ProbeChoice::External => {
            Ok(Probe::External(Box::new(ExternalProbe::fit(&train.images, &train.attributes, cfg.probe_config())?)))
        }
    }
}

fn grid_name(stem: &str, channels: usize) -> String {
    format!("{stem}.{}", if channels == 1 { "pgm" } else { "ppm" })
}

fn labels_if_one_hot(ds_attributes: &Tensor) -> Option<Vec<usize>> {
    let d = ds_attributes.shape()[1];
    let rows: Vec<&[f64]> = ds_attributes.data().chunks(d).collect();
    rows.iter()
        .all(|r| r.iter().all(|&v| v == 0.0 || v == 1.0) && r.iter().sum::<f64>() == 1.0)
        .then(|| rows.iter().map(|r| r.iter().position(|&v| v == 1.0).unwrap_or(0)).collect())
}

fn to_idx(images: &Tensor) -> IdxArray {
    let s = images.shape();
    let dims = if s[1] == 1 { vec![s[0], s[2], s[3]] } else { s.to_vec() };
    IdxArray { dims, data: images.data().iter().map(|&v| unit_to_byte(v)).collect() }
}

fn from_idx(bytes: &[u8]) -> Result<Tensor, CliError> {
    let arr = IdxArray::parse(bytes, 3).or_else(|_| IdxArray::parse(bytes, 4))?;
    let shape = match arr.dims[..] {
        [n, h, w] => vec![n, 1, h, w],
        _ => arr.dims.clone(),
    };
    Ok(Tensor::new(shape, arr.data.iter().map(|&b| byte_to_unit(b)).collect())?)
}

fn report_json(r: &EvalReport) -> serde_json::Value {
    json!({
        "kind": r.kind.as_str(),
        "dataset": r.dataset,
        "loss": r.loss,
        "accuracy": r.accuracy,
        "cell": table_cell(r.loss, r.accuracy),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn manifest(cfg: &RunConfig, command: &str, extra: serde_json::Value) -> serde_json::Value {
    let mut m = json!({
        "command": command,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "kind": cfg.kind,
        "dataset": cfg.dataset,
        "versions": { "resgan": env!("CARGO_PKG_VERSION") },
        "config": serde_json::to_value(RunConfig { out: None, ..cfg.clone() }).expect("configs serialize"),
    });
    if let (Some(m), serde_json::Value::Object(extra)) = (m.as_object_mut(), extra) {
        m.extend(extra);
    }
    m
}

/// Appends metrics rows and writes periodic checkpoints.
struct RunSink {
    metrics: MetricsWriter,
    dir: PathBuf,
    every: usize,
}

impl EpochSink for RunSink {
    fn epoch_end(&mut self, record: &EpochRecord, trainer: &Trainer) -> resgan_core::Result<()> {
        self.metrics.append(record)?;
        let done = record.epoch + 1;
        if self.every > 0 && done % self.every == 0 {
            trainer.checkpoint(done as u64)?.save(&self.dir.join(format!("checkpoint-{done:04}.rgan")))?;
        }
        Ok(())
    }
}

/// Restored or generated eval images, plus the triptych for restoration.
fn write_grids(dir: &Path, cfg: &RunConfig, trainer: &mut Trainer, pairs: &PairSet) -> Result<(), CliError> {
    let fake = generate_all(&mut trainer.generator, pairs, cfg.seed)?;
    let channels = fake.shape()[1];
    let labels = labels_if_one_hot(&pairs.attributes);
    let samples = match &labels {
        Some(l) => ImageGrid::by_class(&fake, l, cfg.grid_per_class)?,
        None => ImageGrid::row_major(&fake, cfg.grid_per_class)?,
    };
    samples.write(&dir.join(grid_name("samples", channels)))?;
    if trainer.config().kind == ModelKind::Resgan {
        let per_class = cfg.grid_per_class.div_ceil(4).max(1);
        let grid = ImageGrid::triptych(&pairs.coarse, &fake, &pairs.fine, labels.as_deref(), per_class)?;
        grid.write(&dir.join(grid_name("restore", channels)))?;
    }
    Ok(())
}

pub fn train(c: &Common) -> Result<(), CliError> {
    let (cfg, dir) = resolve(c)?;
    let kind = cfg.model_kind()?;
    let tc = cfg.train_config(kind, cfg.seed)?;
    let ds = load_dataset(&cfg, &cfg.dataset)?;
    let (train_ds, eval_ds) = split(&cfg, &ds)?;
    let probe = build_probe(&cfg, kind, &train_ds)?;
    let pairs = make_pairs(&eval_ds, &tc.degrade)?;
    let mut sink = RunSink { metrics: MetricsWriter::create(&dir.join("metrics.csv"))?, dir: dir.clone(), every: tc.checkpoint_every };
    let mut sweep = SweepEvaluator::new(pairs.clone(), probe, cfg.dataset.clone(), tc.epochs, tc.eval_window);
    let result = {
        let mut sinks: [&mut dyn EpochSink; 2] = [&mut sink, &mut sweep];
        run_training(&tc, &train_ds, &mut sinks)
    };
    match result {
        Ok((mut trainer, log)) => {
            trainer.checkpoint(tc.epochs as u64)?.save(&dir.join(CHECKPOINT_FILE))?;
            let report = sweep.average()?;
            write_json(&dir.join("eval.json"), &report_json(&report))?;
            write_grids(&dir, &cfg, &mut trainer, &pairs)?;
            let balance = resgan_core::train::detect_balance(&log);
            let extra = json!({
                "status": "completed",
                "epochs_completed": log.len(),
                "balance_epoch": balance,
                "eval": report_json(&report),
            });
            write_json(&dir.join("manifest.json"), &manifest(&cfg, "train", extra))?;
            println!("{}", dir.display());
            println!("{} on {}: {}", kind.label(), cfg.dataset, table_cell(report.loss, report.accuracy));
            Ok(())
        }
        Err(Error::TrainingDiverged { epoch, message, log }) => {
            let extra = json!({
                "status": "diverged",
                "epochs_completed": log.len(),
                "diverged_at_epoch": epoch,
                "message": message,
            });
            write_json(&dir.join("manifest.json"), &manifest(&cfg, "train", extra))?;
            Err(CliError::Diverged { message: format!("training diverged in epoch {epoch}: {message}") })
        }
        Err(e) => Err(e.into()),
    }
}

pub fn degrade(c: &Common, input: Option<&Path>) -> Result<(), CliError> {
    let (cfg, dir) = resolve(c)?;
    let dc = cfg.degrade_config();
    if let Some(path) = input {
        let pnm = Pnm::read(path)?;
        let image = pnm.tile(0, 0, pnm.height, pnm.width)?.reshape(&[1, pnm.channels, pnm.height, pnm.width])?;
        let out = degrade_images(&image, &dc)?;
        let target = dir.join(grid_name("degraded", pnm.channels));
        ImageGrid::row_major(&out, 1)?.write(&target)?;
        println!("{}", target.display());
        return Ok(());
    }
    let ds = load_dataset(&cfg, &cfg.dataset)?;
    let coarse = degrade_images(&ds.images, &dc)?;
    fs::write(dir.join("coarse-images.idx"), to_idx(&coarse).to_bytes())?;
    let channels = coarse.shape()[1];
    let grid = match labels_if_one_hot(&ds.attributes) {
        Some(l) => ImageGrid::by_class(&coarse, &l, cfg.grid_per_class)?,
        None => ImageGrid::row_major(&coarse, cfg.grid_per_class)?,
    };
    grid.write(&dir.join(grid_name("coarse", channels)))?;
    write_json(&dir.join("manifest.json"), &manifest(&cfg, "degrade", json!({ "images": ds.len() })))?;
    println!("{}", dir.display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => CliError::Config(format!("cannot read checkpoint {}: {io}", path.display())),
        other => other.into(),
    })
}

pub fn restore(c: &Common, checkpoint: &Path, input: Option<&Path>) -> Result<(), CliError> {
    let (cfg, dir) = resolve(c)?;
    let mut ck = load_checkpoint(checkpoint)?;
    if ck.config().kind != ModelKind::Resgan {
        return Err(CliError::Config(format!("restore needs a resgan checkpoint, got {}", ck.config().kind)));
    }
    let (coarse, panels) = match input {
        Some(path) => (from_idx(&fs::read(path)?)?, None),
        None => {
            let ds = load_dataset(&cfg, &cfg.dataset)?;
            let (_, eval_ds) = split(&cfg, &ds)?;
            let pairs = make_pairs(&eval_ds, &cfg.degrade_config())?;
            (pairs.coarse.clone(), Some(pairs))
        }
    };
    let n = coarse.shape()[0];
    let mut parts = Vec::new();
    for start in (0..n).step_by(250) {
        parts.push(generate(&mut ck.generator, &coarse.narrow(0, start, 250.min(n - start))?)?);
    }
    let restored = Tensor::concat(&parts.iter().collect::<Vec<_>>(), 0)?;
    fs::write(dir.join("restored-images.idx"), to_idx(&restored).to_bytes())?;
    let channels = restored.shape()[1];
    let grid = match &panels {
        Some(p) => {
            let labels = labels_if_one_hot(&p.attributes);
            let per_class = cfg.grid_per_class.div_ceil(4).max(1);
            ImageGrid::triptych(&p.coarse, &restored, &p.fine, labels.as_deref(), per_class)?
        }
        None => ImageGrid::row_major(&restored, cfg.grid_per_class)?,
    };
    grid.write(&dir.join(grid_name("restore", channels)))?;
    println!("restored {n} images into {}", dir.display());
    Ok(())
}

pub fn eval(c: &Common, checkpoint: &Path) -> Result<(), CliError> {
    let (cfg, dir) = resolve(c)?;
    let mut ck = load_checkpoint(checkpoint)?;
    let kind = ck.config().kind;
    let ds = load_dataset(&cfg, &cfg.dataset)?;
    let (train_ds, eval_ds) = split(&cfg, &ds)?;
    let mut probe = build_probe(&cfg, kind, &train_ds)?;
    let pairs = make_pairs(&eval_ds, &cfg.degrade_config())?;
    let objective = cfg.train_config(kind, cfg.seed)?.objective();
    let report = evaluate(&mut ck.generator, &mut ck.discriminator, objective, &pairs, &mut probe, cfg.seed, &cfg.dataset)?;
    write_json(&dir.join("eval.json"), &report_json(&report))?;
    println!("{} on {}: {}", kind.label(), cfg.dataset, table_cell(report.loss, report.accuracy));
    Ok(())
}

/// Median report over seeds, or `None` when any seed diverged.
fn bench_cell(cfg: &RunConfig, tc: &TrainConfig, train_ds: &Dataset, pairs: &PairSet, probe: &Probe, name: &str) -> Result<Option<EvalReport>, CliError> {
    let mut reports = Vec::new();
    for seed in cfg.bench_seeds() {
        let tc = TrainConfig { seed, ..*tc };
        let mut sweep = SweepEvaluator::new(pairs.clone(), probe.clone(), name, tc.epochs, tc.eval_window);
        match run_training(&tc, train_ds, &mut sweep) {
            Ok(_) => reports.push(sweep.average()?),
            Err(Error::TrainingDiverged { .. }) => return Ok(None),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Some(EvalReport {
        kind: tc.kind,
        dataset: name.to_string(),
        loss: median(&reports.iter().map(|r| r.loss).collect::<Vec<_>>()),
        accuracy: median(&reports.iter().map(|r| r.accuracy).collect::<Vec<_>>()),
    }))
}

pub fn bench(c: &Common) -> Result<(), CliError> {
    let (cfg, dir) = resolve(c)?;
    let kinds = cfg.bench_kinds()?;
    let datasets = cfg.bench_datasets();
    let mut cells = vec![vec![String::new(); datasets.len()]; kinds.len()];
    let mut csv = String::from("kind,dataset,loss,accuracy,cell\n");
    let mut rows_json = Vec::new();
    for (j, name) in datasets.iter().enumerate() {
        let ds = load_dataset(&cfg, name)?;
        let (train_ds, eval_ds) = split(&cfg, &ds)?;
        let external = match cfg.probe_choice()? {
            ProbeChoice::External => {
                Some(Probe::External(Box::new(ExternalProbe::fit(&train_ds.images, &train_ds.attributes, cfg.probe_config())?)))
            }
            ProbeChoice::Embedded => None,
        };
        for (i, &kind) in kinds.iter().enumerate() {
            let tc = cfg.train_config(kind, cfg.seed)?;
            let probe = match &external {
                Some(p) => p.clone(),
                None => build_probe(&cfg, kind, &train_ds)?,
            };
            let pairs = make_pairs(&eval_ds, &tc.degrade)?;
            let cell = bench_cell(&cfg, &tc, &train_ds, &pairs, &probe, name)?;
            match &cell {
                Some(r) => {
                    cells[i][j] = table_cell(r.loss, r.accuracy);
                    csv.push_str(&format!("{},{name},{},{},{}\n", kind.as_str(), r.loss, r.accuracy, cells[i][j]));
                    rows_json.push(report_json(r));
                }
                None => {
                    cells[i][j] = "diverged".into();
                    csv.push_str(&format!("{},{name},,,diverged\n", kind.as_str()));
                    rows_json.push(json!({ "kind": kind.as_str(), "dataset": name, "cell": "diverged" }));
                }
            }
        }
    }
    let rows: Vec<(String, Vec<String>)> = kinds.iter().map(|k| k.label().to_string()).zip(cells).collect();
    let table = render_table("model", &datasets, &rows);
    fs::write(dir.join("bench.csv"), csv)?;
    fs::write(dir.join("bench.txt"), &table)?;
    write_json(&dir.join("manifest.json"), &manifest(&cfg, "bench", json!({ "status": "completed", "cells": rows_json })))?;
    print!("{table}");
    Ok(())
}
