//! Alternating adversarial optimization.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EpochRecord, Optimizer, TrainConfig, TrainingLog};
use crate::data::{make_pairs, Dataset, PairSet};
use crate::error::{Error, Result};
use crate::models::{
    argmax, build_discriminator, build_generator, Checkpoint, Discriminator, Generator, ImageShape, ModelKind,
    NoisePrior, OutputActivation,
};
use crate::nn::{Binder, Mode};
use crate::tensor::{Tape, Tensor, Var};

const DATA_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

/// Losses and accuracy counts of one `train_step`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    /// Discriminator loss of the last discriminator update.
    pub loss_d: f64,
    pub loss_g: f64,
    pub hits: usize,
    pub total: usize,
}

/// Pre-update loss of a single module update with its accuracy counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateMetrics {
    pub loss: f64,
    pub hits: usize,
    pub total: usize,
}

/// A generator/discriminator pair with their optimizers and noise source.
pub struct Trainer {
    config: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    g_opt: Optimizer,
    d_opt: Optimizer,
    noise: NoisePrior,
    noise_rng: ChaCha8Rng,
}

pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn diverged(epoch: usize, message: String) -> Error {
    Error::TrainingDiverged { epoch, message, log: Box::default() }
}

fn finite_scalar(v: Var<'_>, what: &str, epoch: usize) -> Result<f64> {
    let x = v.value().data()[0];
    if x.is_finite() {
        Ok(x)
    } else {
        Err(diverged(epoch, format!("{what} became {x}")))
    }
}

fn finite_grads(grads: &[Tensor], what: &str, epoch: usize) -> Result<()> {
    if grads.iter().all(Tensor::is_finite) {
        Ok(())
    } else {
        Err(diverged(epoch, format!("non-finite {what} gradient")))
    }
}

fn finite_params(params: &[&Tensor], what: &str, epoch: usize) -> Result<()> {
    if params.iter().all(|p| p.is_finite()) {
        Ok(())
    } else {
        Err(diverged(epoch, format!("a {what} update produced non-finite parameters")))
    }
}

/// Rows whose argmax response matches the argmax attribute.
pub(crate) fn argmax_hits(responses: &Tensor, attributes: &Tensor) -> usize {
    let d = attributes.shape()[1];
    responses.data().chunks(d).zip(attributes.data().chunks(d)).filter(|(r, a)| argmax(r) == argmax(a)).count()
}

impl Trainer {
    pub fn new(config: TrainConfig, shape: ImageShape, attributes: usize) -> Result<Self> {
        config.validate()?;
        let model = config.model_config(shape, attributes);
        Ok(Self {
            config,
            generator: build_generator(&model)?,
            discriminator: build_discriminator(&model)?,
            g_opt: Optimizer::new(config.optimizer)?,
            d_opt: Optimizer::new(config.optimizer)?,
            noise: NoisePrior::new(config.noise_dim)?,
            noise_rng: seeded(config.seed, NOISE_STREAM),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Generator input for a batch: the coarse images for restoration,
    /// fresh noise (joined with `Y` for CGAN) otherwise.
    pub fn generator_input(&mut self, batch: &PairSet) -> Result<Tensor> {
        generator_input(self.config.kind, &self.noise, &mut self.noise_rng, batch)
    }

    fn conditioning<'t>(&self, tape: &'t Tape, batch: &PairSet) -> Option<Var<'t>> {
        matches!(self.config.kind, ModelKind::Cgan | ModelKind::Resgan).then(|| tape.constant(batch.attributes.clone()))
    }

    /// Discriminator updates followed by one generator update. `epoch` is
    /// only used to label a divergence.
    pub fn train_step(&mut self, batch: &PairSet, epoch: usize) -> Result<StepMetrics> {
        if batch.len() < 2 {
            return Err(Error::Contract("training batches need at least two examples".into()));
        }
        let (mut loss_d, mut hits, mut total) = (0.0, 0, 0);
        for _ in 0..self.config.d_steps {
            let input = self.generator_input(batch)?;
            let step = self.discriminator_step_with(batch, &input, epoch)?;
            loss_d = step.loss;
            (hits, total) = (step.hits, step.total);
        }
        let input = self.generator_input(batch)?;
        let step = self.generator_step_with(batch, &input, epoch)?;
        if self.config.kind == ModelKind::Resgan {
            (hits, total) = (step.hits, step.total);
        }
        Ok(StepMetrics { loss_d, loss_g: step.loss, hits, total })
    }

    /// One discriminator update with the generator fed `input`. Returns the
    /// loss before the update; the generator uses batch statistics without
    /// touching its buffers.
    pub fn discriminator_step_with(&mut self, batch: &PairSet, input: &Tensor, epoch: usize) -> Result<UpdateMetrics> {
        let tape = Tape::new();
        let mut gb = Binder::new(&tape, Mode::Train, false).freeze_buffers();
        let fake = self.generator.forward(tape.constant(input.clone()), &mut gb)?;
        let mut db = Binder::new(&tape, Mode::Train, true);
        let y = self.conditioning(&tape, batch);
        let d_real = self.discriminator.forward(tape.constant(batch.fine.clone()), y, &mut db)?;
        let d_fake = self.discriminator.forward(fake, y, &mut db)?;
        let losses = self.config.objective().losses(d_real, d_fake, y)?;
        let loss = finite_scalar(losses.discriminator, "discriminator loss", epoch)?;
        tape.backward(losses.discriminator)?;
        let grads = db.grads();
        finite_grads(&grads, "discriminator", epoch)?;
        // Real and fake passes each bound the parameters once.
        let grads = fold_repeated(grads, self.discriminator.parameters().len());
        self.d_opt.step(self.discriminator.parameters_mut(), &grads)?;
        finite_params(&self.discriminator.parameters(), "discriminator", epoch)?;
        if self.config.kind == ModelKind::Wgan {
            self.discriminator.clip_weights(self.config.clip_c);
        }
        let (hits, total) = real_fake_hits(&d_real.value(), &d_fake.value(), self.discriminator.output_activation());
        Ok(UpdateMetrics { loss, hits, total })
    }

    /// One generator update on `input`, returning the loss before the
    /// update. Accuracy counts are argmax agreement of the attribute
    /// responses; they are only meaningful for restoration.
    pub fn generator_step_with(&mut self, batch: &PairSet, input: &Tensor, epoch: usize) -> Result<UpdateMetrics> {
        let tape = Tape::new();
        let mut gb = Binder::new(&tape, Mode::Train, true);
        let fake = self.generator.forward(tape.constant(input.clone()), &mut gb)?;
        let mut db = Binder::new(&tape, Mode::Train, false);
        let y = self.conditioning(&tape, batch);
        let d_fake = self.discriminator.forward(fake, y, &mut db)?;
        let loss_var = self.config.objective().generator_loss(d_fake, y)?;
        let loss = finite_scalar(loss_var, "generator loss", epoch)?;
        tape.backward(loss_var)?;
        let grads = gb.grads();
        finite_grads(&grads, "generator", epoch)?;
        self.g_opt.step(self.generator.parameters_mut(), &grads)?;
        finite_params(&self.generator.parameters(), "generator", epoch)?;
        let hits = if d_fake.shape()[1] == batch.attributes.shape()[1] { argmax_hits(&d_fake.value(), &batch.attributes) } else { 0 };
        Ok(UpdateMetrics { loss, hits, total: batch.len() })
    }

    pub fn checkpoint(&self, epoch: u64) -> Result<Checkpoint> {
        Checkpoint::new(self.generator.clone(), self.discriminator.clone(), epoch)
    }

    /// Runs one epoch over `pairs` in the given order.
    fn epoch(&mut self, pairs: &PairSet, order: &[usize], epoch: usize) -> Result<EpochRecord> {
        let start = Instant::now();
        let (mut sum_g, mut sum_d, mut steps, mut hits, mut total) = (0.0, 0.0, 0, 0, 0);
        for chunk in order.chunks(self.config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let m = self.train_step(&pairs.batch(chunk)?, epoch)?;
            sum_g += m.loss_g;
            sum_d += m.loss_d;
            steps += 1;
            hits += m.hits;
            total += m.total;
        }
        if steps == 0 {
            return Err(Error::Contract("the training split yields no batch of two or more examples".into()));
        }
        let wall_ms = if self.config.record_wall_time { start.elapsed().as_millis() as u64 } else { 0 };
        Ok(EpochRecord {
            epoch,
            loss_g: sum_g / steps as f64,
            loss_d: sum_d / steps as f64,
            accuracy: hits as f64 / total.max(1) as f64,
            wall_ms,
        })
    }
}

pub(crate) fn generator_input(kind: ModelKind, noise: &NoisePrior, rng: &mut ChaCha8Rng, batch: &PairSet) -> Result<Tensor> {
    match kind {
        ModelKind::Resgan => Ok(batch.coarse.clone()),
        ModelKind::Cgan => Tensor::concat(&[&noise.sample(batch.len(), rng), &batch.attributes], 1),
        _ => Ok(noise.sample(batch.len(), rng)),
    }
}

/// Sums gradients of parameters bound once per discriminator application.
fn fold_repeated(grads: Vec<Tensor>, per_pass: usize) -> Vec<Tensor> {
    let mut out: Vec<Tensor> = grads[..per_pass].to_vec();
    for (i, g) in grads.into_iter().enumerate().skip(per_pass) {
        out[i % per_pass].data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
    }
    out
}

/// Real/fake decisions of a single-output discriminator: logistic outputs
/// are thresholded at one half, critic scores are compared pairwise.
fn real_fake_hits(real: &Tensor, fake: &Tensor, activation: OutputActivation) -> (usize, usize) {
    match activation {
        OutputActivation::Logistic => {
            let hits = real.data().iter().filter(|&&v| v > 0.5).count() + fake.data().iter().filter(|&&v| v < 0.5).count();
            (hits, real.len() + fake.len())
        }
        OutputActivation::Wasserstein => {
            let hits = real.data().iter().zip(fake.data()).filter(|(r, f)| r > f).count();
            (hits, real.len())
        }
    }
}

/// Receives each completed epoch before the next one starts.
pub trait EpochSink {
    fn epoch_end(&mut self, record: &EpochRecord, trainer: &Trainer) -> Result<()>;
}

impl EpochSink for () {
    fn epoch_end(&mut self, _: &EpochRecord, _: &Trainer) -> Result<()> {
        Ok(())
    }
}

impl<const N: usize> EpochSink for [&mut dyn EpochSink; N] {
    fn epoch_end(&mut self, record: &EpochRecord, trainer: &Trainer) -> Result<()> {
        self.iter_mut().try_for_each(|s| s.epoch_end(record, trainer))
    }
}

/// Trains on `data` for `config.epochs` epochs. Each epoch visits the
/// degraded pairs in a fresh seeded order; a trailing batch of one example
/// is dropped. On divergence the error carries every completed epoch.
pub fn train(config: &TrainConfig, data: &Dataset, sink: &mut dyn EpochSink) -> Result<(Trainer, TrainingLog)> {
    let mut trainer = Trainer::new(*config, data.shape(), data.d())?;
    let pairs = make_pairs(data, &config.degrade)?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut data_rng = seeded(config.seed, DATA_STREAM);
    let mut log = TrainingLog::new(String::new(), config.seed);
    for epoch in 0..config.epochs {
        order.shuffle(&mut data_rng);
        let record = match trainer.epoch(&pairs, &order, epoch) {
            Ok(r) => r,
            Err(Error::TrainingDiverged { epoch, message, .. }) => {
                return Err(Error::TrainingDiverged { epoch, message, log: Box::new(log) });
            }
            Err(e) => return Err(e),
        };
        sink.epoch_end(&record, &trainer)?;
        log.records.push(record);
    }
    Ok((trainer, log))
}
