use crate::data::DegradeConfig;
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelKind, ResidualMode, DEFAULT_NOISE_DIM};
use crate::nn::BatchNormConfig;
use crate::objectives::{GanObjective, DEFAULT_LOG_EPSILON};

use super::OptimizerConfig;

/// Everything that determines a training run besides the data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    /// Critic weight clip for WGAN.
    pub clip_c: f64,
    pub seed: u64,
    pub degrade: DegradeConfig,
    pub residual_mode: ResidualMode,
    pub noise_dim: usize,
    pub log_epsilon: f64,
    pub saturating: bool,
    pub batchnorm: BatchNormConfig,
    /// Checkpoint cadence in epochs; 0 keeps only the final snapshot.
    pub checkpoint_every: usize,
    /// Final epochs averaged by sweep evaluation.
    pub eval_window: usize,
    /// Store measured wall time in the log. Off by default so that logs of
    /// identical runs are byte-identical.
    pub record_wall_time: bool,
}

impl TrainConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            epochs: 30,
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
            d_steps: if kind == ModelKind::Wgan { 5 } else { 1 },
            clip_c: 0.01,
            seed: 0,
            degrade: DegradeConfig::default(),
            residual_mode: ResidualMode::Concat,
            noise_dim: DEFAULT_NOISE_DIM,
            log_epsilon: DEFAULT_LOG_EPSILON,
            saturating: false,
            batchnorm: BatchNormConfig::default(),
            checkpoint_every: 0,
            eval_window: 50,
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 for batch normalization".into()));
        }
        if self.d_steps == 0 {
            return Err(Error::Config("d_steps must be at least 1".into()));
        }
        if !(self.clip_c > 0.0 && self.clip_c.is_finite()) {
            return Err(Error::Config(format!("clip_c must be positive, got {}", self.clip_c)));
        }
        if self.eval_window == 0 {
            return Err(Error::Config("eval_window must be at least 1".into()));
        }
        if !(self.batchnorm.epsilon > 0.0) || !(0.0..=1.0).contains(&self.batchnorm.momentum) {
            return Err(Error::Config("batchnorm needs epsilon > 0 and momentum in [0, 1]".into()));
        }
        self.optimizer.validate()?;
        self.degrade.validate()
    }

    pub fn model_config(&self, shape: crate::models::ImageShape, attributes: usize) -> ModelConfig {
        let mut m = ModelConfig::new(self.kind, shape, attributes, self.seed);
        m.residual_mode = self.residual_mode;
        m.noise_dim = self.noise_dim;
        m.batchnorm = self.batchnorm;
        m
    }

    pub fn objective(&self) -> GanObjective {
        GanObjective { kind: self.kind, epsilon: self.log_epsilon, saturating: self.saturating }
    }
}
