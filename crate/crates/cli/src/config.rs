//! The flat run document, `--set` overrides and the content hash.

use std::path::{Path, PathBuf};

use resgan_core::data::{CifarVariant, DegradeConfig};
use resgan_core::models::{ModelKind, ResidualMode};
use resgan_core::nn::BatchNormConfig;
use resgan_core::train::{OptimizerConfig, OptimizerKind, ProbeConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kind: String,
    /// `mnist`, `cifar10`, `cifar100` or `synth`.
    pub dataset: String,
    /// Required for every dataset except `synth`.
    pub data_dir: Option<PathBuf>,
    /// CIFAR file split: `train` or `test`.
    pub split: String,
    pub train_size: usize,
    pub eval_size: usize,
    pub split_seed: u64,
    pub synth_channels: usize,
    pub synth_height: usize,
    pub synth_width: usize,
    pub synth_classes: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: String,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Defaults to 5 for wgan and 1 otherwise.
    pub d_steps: Option<usize>,
    pub clip_c: f64,
    pub seed: u64,
    pub residual_mode: String,
    pub noise_dim: usize,
    pub log_epsilon: f64,
    pub saturating: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub checkpoint_every: usize,
    pub eval_window: usize,
    pub record_wall_time: bool,

    pub factor: usize,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub degrade_seed: u64,

    /// `external` or `embedded`.
    pub probe: String,
    pub probe_epochs: usize,
    /// Tiles per class row in image grids.
    pub grid_per_class: usize,

    /// Bench axes; empty means `[kind]`, `[dataset]` and `[seed]`.
    pub kinds: Vec<String>,
    pub datasets: Vec<String>,
    pub seeds: Vec<u64>,
    pub mnist_dir: Option<PathBuf>,
    pub cifar10_dir: Option<PathBuf>,
    pub cifar100_dir: Option<PathBuf>,

    /// Output root; not part of the run identity.
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::new(ModelKind::Resgan);
        Self {
            kind: "resgan".into(),
            dataset: "mnist".into(),
            data_dir: None,
            split: "train".into(),
            train_size: 2000,
            eval_size: 500,
            split_seed: 0,
            synth_channels: 1,
            synth_height: 28,
            synth_width: 28,
            synth_classes: 10,
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: "adam".into(),
            lr: t.optimizer.lr,
            beta1: t.optimizer.beta1,
            beta2: t.optimizer.beta2,
            d_steps: None,
            clip_c: t.clip_c,
            seed: t.seed,
            residual_mode: "concat".into(),
            noise_dim: t.noise_dim,
            log_epsilon: t.log_epsilon,
            saturating: t.saturating,
            bn_momentum: t.batchnorm.momentum,
            bn_epsilon: t.batchnorm.epsilon,
            checkpoint_every: t.checkpoint_every,
            eval_window: 5,
            record_wall_time: false,
            factor: t.degrade.factor,
            blur_sigma: t.degrade.blur_sigma,
            noise_sigma: t.degrade.noise_sigma,
            degrade_seed: t.degrade.seed,
            probe: "external".into(),
            probe_epochs: ProbeConfig::default().epochs,
            grid_per_class: 8,
            kinds: Vec::new(),
            datasets: Vec::new(),
            seeds: Vec::new(),
            mnist_dir: None,
            cifar10_dir: None,
            cifar100_dir: None,
            out: None,
        }
    }
}

/// Which judge scores generated images.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeChoice {
    External,
    Embedded,
}

/// 1-based line and column of byte `offset` in `text`.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn parse_error(source: &str, text: &str, e: &toml::de::Error) -> CliError {
    let message = e.message().to_string();
    match e.span() {
        Some(span) => {
            let (line, column) = line_col(text, span.start);
            CliError::Config(format!("{source}:{line}:{column}: {message}"))
        }
        None => CliError::Config(format!("{source}: {message}")),
    }
}

/// A `--set` value: TOML syntax when it parses, a bare string otherwise.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    /// Reads `path` (or starts from the defaults), then applies `overrides`
    /// of the form `KEY=VALUE` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let (source, text) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                (p.display().to_string(), text)
            }
            None => ("<defaults>".to_string(), String::new()),
        };
        toml::from_str::<RunConfig>(&text).map_err(|e| parse_error(&source, &text, &e))?;
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| parse_error(&source, &text, &e))?;
        for o in overrides {
            let (key, value) =
                o.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
            table.insert(key.trim().to_string(), override_value(value.trim()));
        }
        RunConfig::deserialize(toml::Value::Table(table)).map_err(|e| CliError::Config(format!("--set: {}", e.message())))
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form, with
    /// the output root left out.
    pub fn hash(&self) -> String {
        let identity = RunConfig { out: None, ..self.clone() };
        let json = serde_json::to_vec(&identity).expect("configs serialize");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }

    pub fn model_kind(&self) -> Result<ModelKind, CliError> {
        Ok(self.kind.parse()?)
    }

    pub fn probe_choice(&self) -> Result<ProbeChoice, CliError> {
        match self.probe.as_str() {
            "external" => Ok(ProbeChoice::External),
            "embedded" => Ok(ProbeChoice::Embedded),
            other => Err(CliError::Config(format!("probe must be `external` or `embedded`, got `{other}`"))),
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig { epochs: self.probe_epochs, seed: self.split_seed, ..ProbeConfig::default() }
    }

    pub fn degrade_config(&self) -> DegradeConfig {
        DegradeConfig {
            factor: self.factor,
            blur_sigma: self.blur_sigma,
            noise_sigma: self.noise_sigma,
            seed: self.degrade_seed,
        }
    }

    pub fn train_config(&self, kind: ModelKind, seed: u64) -> Result<TrainConfig, CliError> {
        let mut t = TrainConfig::new(kind);
        t.epochs = self.epochs;
        t.batch_size = self.batch_size;
        t.optimizer = OptimizerConfig {
            kind: self.optimizer.parse::<OptimizerKind>()?,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..OptimizerConfig::default()
        };
        if let Some(d) = self.d_steps {
            t.d_steps = d;
        }
        t.clip_c = self.clip_c;
        t.seed = seed;
        t.degrade = self.degrade_config();
        t.residual_mode = self.residual_mode.parse::<ResidualMode>()?;
        t.noise_dim = self.noise_dim;
        t.log_epsilon = self.log_epsilon;
        t.saturating = self.saturating;
        t.batchnorm = BatchNormConfig { momentum: self.bn_momentum, epsilon: self.bn_epsilon };
        t.checkpoint_every = self.checkpoint_every;
        t.eval_window = self.eval_window.clamp(1, self.epochs.max(1));
        t.record_wall_time = self.record_wall_time;
        t.validate()?;
        Ok(t)
    }

    pub fn bench_kinds(&self) -> Result<Vec<ModelKind>, CliError> {
        if self.kinds.is_empty() {
            return Ok(vec![self.model_kind()?]);
        }
        self.kinds.iter().map(|k| Ok(k.parse()?)).collect()
    }

    pub fn bench_datasets(&self) -> Vec<String> {
        if self.datasets.is_empty() {
            vec![self.dataset.clone()]
        } else {
            self.datasets.clone()
        }
    }

    pub fn bench_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Directory of dataset `name`: its own key first, then `data_dir` when
    /// `name` is the primary dataset.
    pub fn dataset_dir(&self, name: &str) -> Option<&Path> {
        let specific = match name {
            "mnist" => self.mnist_dir.as_deref(),
            "cifar10" => self.cifar10_dir.as_deref(),
            "cifar100" => self.cifar100_dir.as_deref(),
            _ => None,
        };
        specific.or_else(|| (name == self.dataset).then_some(self.data_dir.as_deref()).flatten())
    }

    pub fn cifar_variant(name: &str) -> Option<CifarVariant> {
        name.parse().ok()
    }
}
