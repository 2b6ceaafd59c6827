//! Held-out evaluation: generator loss and attribute accuracy of generated
//! images.

use super::trainer::{argmax_hits, generator_input, seeded};
use super::{EpochRecord, EpochSink, ExternalProbe, Trainer};
use crate::data::PairSet;
use crate::error::{Error, Result};
use crate::models::{discriminate, generate, Discriminator, Generator, ModelKind, NoisePrior};
use crate::objectives::GanObjective;
use crate::tensor::{Tape, Tensor};

const EVAL_STREAM: u64 = 6;
const EVAL_BATCH: usize = 250;

/// Who judges whether a generated image shows its attributes.
#[derive(Clone, Debug)]
pub enum Probe {
    /// The restoration discriminator's own attribute outputs.
    Embedded,
    /// A classifier fit to real images.
    External(Box<ExternalProbe>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub kind: ModelKind,
    pub dataset: String,
    /// Generator loss on the split.
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean of several reports of the same model on the same split.
pub fn average_reports(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports.first().ok_or_else(|| Error::Contract("no reports to average".into()))?;
    let n = reports.len() as f64;
    Ok(EvalReport {
        kind: first.kind,
        dataset: first.dataset.clone(),
        loss: reports.iter().map(|r| r.loss).sum::<f64>() / n,
        accuracy: reports.iter().map(|r| r.accuracy).sum::<f64>() / n,
    })
}

/// Generated images for every pair, with noise drawn from a stream fixed by
/// `seed` so repeated evaluations see the same inputs.
pub fn generate_all(generator: &mut Generator, pairs: &PairSet, seed: u64) -> Result<Tensor> {
    let config = *generator.config();
    let noise = NoisePrior::new(config.noise_dim)?;
    let mut rng = seeded(seed, EVAL_STREAM);
    let mut parts = Vec::new();
    for start in (0..pairs.len()).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..pairs.len().min(start + EVAL_BATCH)).collect();
        let batch = pairs.batch(&idx)?;
        let input = generator_input(config.kind, &noise, &mut rng, &batch)?;
        parts.push(generate(generator, &input)?);
    }
    Tensor::concat(&parts.iter().collect::<Vec<_>>(), 0)
}

/// Scores a generator on held-out pairs. The loss is the generator's own
/// objective against the discriminator in eval mode; accuracy comes from
/// `probe`. Unconditional generators are scored against each pair's
/// attributes, which puts them at chance.
pub fn evaluate(
    generator: &mut Generator,
    discriminator: &mut Discriminator,
    objective: GanObjective,
    pairs: &PairSet,
    probe: &mut Probe,
    seed: u64,
    dataset: &str,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty split".into()));
    }
    let kind = generator.config().kind;
    if matches!(probe, Probe::Embedded) && kind != ModelKind::Resgan {
        return Err(Error::Contract(format!("{kind} has no attribute outputs; use the external probe")));
    }
    let fake = generate_all(generator, pairs, seed)?;
    let conditioned = matches!(kind, ModelKind::Cgan | ModelKind::Resgan);
    let mut responses = Vec::with_capacity(pairs.len() * discriminator.outputs());
    for start in (0..pairs.len()).step_by(EVAL_BATCH) {
        let len = EVAL_BATCH.min(pairs.len() - start);
        let y = pairs.attributes.narrow(0, start, len)?;
        let out = discriminate(discriminator, &fake.narrow(0, start, len)?, conditioned.then_some(&y))?;
        responses.extend_from_slice(out.data());
    }
    let responses = Tensor::new([pairs.len(), discriminator.outputs()], responses)?;
    let tape = Tape::new();
    let y = conditioned.then(|| tape.constant(pairs.attributes.clone()));
    let loss = objective.generator_loss(tape.constant(responses.clone()), y)?.value().data()[0];
    let accuracy = match probe {
        Probe::Embedded => argmax_hits(&responses, &pairs.attributes) as f64 / pairs.len() as f64,
        Probe::External(p) => p.accuracy(&fake, &pairs.attributes)?,
    };
    Ok(EvalReport { kind, dataset: dataset.to_string(), loss, accuracy })
}

impl Trainer {
    pub fn evaluate(&mut self, pairs: &PairSet, probe: &mut Probe, dataset: &str) -> Result<EvalReport> {
        let (objective, seed) = (self.config().objective(), self.config().seed);
        evaluate(&mut self.generator, &mut self.discriminator, objective, pairs, probe, seed, dataset)
    }
}

/// Evaluates after each of the final `window` epochs of a run.
pub struct SweepEvaluator {
    pairs: PairSet,
    probe: Probe,
    dataset: String,
    first_epoch: usize,
    reports: Vec<EvalReport>,
}

impl SweepEvaluator {
    pub fn new(pairs: PairSet, probe: Probe, dataset: impl Into<String>, epochs: usize, window: usize) -> Self {
        Self { pairs, probe, dataset: dataset.into(), first_epoch: epochs.saturating_sub(window), reports: Vec::new() }
    }

    pub fn reports(&self) -> &[EvalReport] {
        &self.reports
    }

    pub fn average(&self) -> Result<EvalReport> {
        average_reports(&self.reports)
    }

    pub fn probe_mut(&mut self) -> &mut Probe {
        &mut self.probe
    }
}

impl EpochSink for SweepEvaluator {
    fn epoch_end(&mut self, record: &EpochRecord, trainer: &Trainer) -> Result<()> {
        if record.epoch < self.first_epoch {
            return Ok(());
        }
        let (mut g, mut d) = (trainer.generator.clone(), trainer.discriminator.clone());
        let c = trainer.config();
        let report = evaluate(&mut g, &mut d, c.objective(), &self.pairs, &mut self.probe, c.seed, &self.dataset)?;
        self.reports.push(report);
        Ok(())
    }
}
