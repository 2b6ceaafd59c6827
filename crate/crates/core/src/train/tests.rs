use rand::Rng;

use super::*;
use crate::data::{make_pairs, synth_dataset, Dataset, PairSet};
use crate::error::Error;
use crate::models::{ImageShape, ModelKind};
use crate::tensor::Tensor;

fn synth(n: usize, seed: u64) -> Dataset {
    synth_dataset(n, ImageShape::new(1, 16, 16), 4, seed).unwrap()
}

fn small(kind: ModelKind) -> TrainConfig {
    let mut c = TrainConfig::new(kind);
    c.epochs = 2;
    c.batch_size = 8;
    c.noise_dim = 8;
    c.seed = 42;
    c
}

fn first_batch(ds: &Dataset, config: &TrainConfig, n: usize) -> PairSet {
    make_pairs(ds, &config.degrade).unwrap().batch(&(0..n).collect::<Vec<_>>()).unwrap()
}

fn params(t: &Trainer) -> (Vec<Tensor>, Vec<Tensor>) {
    (
        t.generator.parameters().into_iter().cloned().collect(),
        t.discriminator.parameters().into_iter().cloned().collect(),
    )
}

#[test]
fn discriminator_step_does_not_increase_its_loss() {
    let ds = synth(32, 42);
    for kind in ModelKind::ALL {
        let mut config = small(kind);
        config.optimizer.lr = 1e-3;
        let batch = first_batch(&ds, &config, 16);
        let mut t = Trainer::new(config, ds.shape(), ds.d()).unwrap();
        let input = t.generator_input(&batch).unwrap();
        let before = t.discriminator_step_with(&batch, &input, 0).unwrap().loss;
        let after = t.discriminator_step_with(&batch, &input, 0).unwrap().loss;
        assert!(after <= before, "{kind}: {before} -> {after}");
    }
}

#[test]
fn zero_learning_rate_freezes_every_parameter() {
    let ds = synth(24, 1);
    for kind in ModelKind::ALL {
        let mut config = small(kind);
        config.optimizer.lr = 0.0;
        // Clipping is not a gradient step; keep it inactive here.
        config.clip_c = 1.0;
        let fresh = Trainer::new(config, ds.shape(), ds.d()).unwrap();
        let (trained, _) = train(&config, &ds, &mut ()).unwrap();
        assert_eq!(params(&fresh), params(&trained), "{kind}");
    }
}

#[test]
fn critic_weights_stay_clipped() {
    let ds = synth(16, 3);
    let config = small(ModelKind::Wgan);
    let mut t = Trainer::new(config, ds.shape(), ds.d()).unwrap();
    let batch = first_batch(&ds, &config, 16);
    t.train_step(&batch, 0).unwrap();
    let max = t.discriminator.parameters().iter().map(|p| p.max_abs()).fold(0.0, f64::max);
    assert!(max <= 0.01, "{max}");
}

#[test]
fn each_update_touches_only_its_module() {
    let ds = synth(16, 5);
    for kind in ModelKind::ALL {
        let config = small(kind);
        let batch = first_batch(&ds, &config, 8);
        let mut t = Trainer::new(config, ds.shape(), ds.d()).unwrap();
        let (g0, d0) = params(&t);
        let input = t.generator_input(&batch).unwrap();
        t.discriminator_step_with(&batch, &input, 0).unwrap();
        let (g1, d1) = params(&t);
        assert_eq!(g0, g1, "{kind}: discriminator step moved the generator");
        assert_ne!(d0, d1, "{kind}");
        t.generator_step_with(&batch, &input, 0).unwrap();
        let (g2, d2) = params(&t);
        assert_eq!(d1, d2, "{kind}: generator step moved the discriminator");
        assert_ne!(g1, g2, "{kind}");
    }
}

#[test]
fn single_example_batches_are_refused() {
    let ds = synth(8, 5);
    let config = small(ModelKind::Resgan);
    let mut t = Trainer::new(config, ds.shape(), ds.d()).unwrap();
    assert!(matches!(t.train_step(&first_batch(&ds, &config, 1), 0), Err(Error::Contract(_))));
}

#[test]
fn training_is_deterministic_and_logs_every_epoch() {
    let ds = synth(20, 9);
    for kind in [ModelKind::Resgan, ModelKind::Cgan, ModelKind::Wgan] {
        let mut config = small(kind);
        config.epochs = 3;
        let (a, log_a) = train(&config, &ds, &mut ()).unwrap();
        let (b, log_b) = train(&config, &ds, &mut ()).unwrap();
        assert_eq!(log_a.len(), 3);
        assert_eq!(log_a, log_b);
        assert_eq!(metrics_csv(&log_a), metrics_csv(&log_b));
        assert!(log_a.records.iter().all(|r| r.wall_ms == 0 && r.loss_g.is_finite() && r.loss_d.is_finite()));
        assert!(log_a.records.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
        assert_eq!(a.checkpoint(3).unwrap().to_bytes(), b.checkpoint(3).unwrap().to_bytes());
        config.seed += 1;
        assert_ne!(train(&config, &ds, &mut ()).unwrap().1, log_a);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = synth(8, 0);
    let mut c = small(ModelKind::Gan);
    c.epochs = 0;
    assert!(matches!(train(&c, &ds, &mut ()), Err(Error::Config(_))));
    let mut c = small(ModelKind::Gan);
    c.batch_size = 1;
    assert!(matches!(train(&c, &ds, &mut ()), Err(Error::Config(_))));
    let mut c = small(ModelKind::Gan);
    c.optimizer.lr = f64::NAN;
    assert!(matches!(train(&c, &ds, &mut ()), Err(Error::Config(_))));
}

#[test]
fn divergence_keeps_completed_epochs() {
    struct Poison;
    impl EpochSink for Poison {
        fn epoch_end(&mut self, record: &EpochRecord, trainer: &Trainer) -> crate::Result<()> {
            assert!(trainer.generator.parameters().iter().all(|p| p.is_finite()));
            let _ = record;
            Ok(())
        }
    }
    let ds = synth(16, 2);
    let mut c = small(ModelKind::Wgan);
    c.epochs = 4;
    // An enormous step drives the critic scores to infinity.
    c.optimizer.kind = OptimizerKind::Sgd;
    c.optimizer.lr = 1e300;
    c.clip_c = 1e300;
    match train(&c, &ds, &mut Poison) {
        Err(Error::TrainingDiverged { log, .. }) => assert!(log.len() < 4),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.1)),
    }
}

#[test]
fn balance_shifts_with_prepended_epochs() {
    let log = TrainingLog::from_losses(&[2.0, 1.5, 1.0], &[1.0, 1.4, 1.8]);
    assert_eq!(detect_balance(&log), Some(2));
    for k in 1..5 {
        let mut g = vec![3.0; k];
        let mut d = vec![0.5; k];
        g.extend([2.0, 1.5, 1.0]);
        d.extend([1.0, 1.4, 1.8]);
        assert_eq!(detect_balance(&TrainingLog::from_losses(&g, &d)), Some(2 + k));
    }
}

#[test]
fn argmax_accuracy_of_random_responses_is_chance() {
    use crate::train::trainer::argmax_hits;
    let mut rng = crate::train::trainer::seeded(7, 0);
    let n = 4000;
    let responses = Tensor::from_fn(&[n, 10], |_| rng.random::<f64>());
    let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    let attrs = crate::data::one_hot(&labels, 10).unwrap();
    let acc = argmax_hits(&responses, &attrs) as f64 / n as f64;
    assert!((acc - 0.1).abs() < 0.03, "{acc}");
    let one = Tensor::new([1, 3], vec![0.1, 0.7, 0.2]).unwrap();
    assert_eq!(argmax_hits(&one, &crate::data::one_hot(&[1], 3).unwrap()), 1);
}

#[test]
fn evaluation_reports_and_contracts() {
    let ds = synth(64, 4);
    let (train_ds, eval_ds) = ds.split(40, 24, 0).unwrap();
    let mut probe = Probe::External(Box::new(
        ExternalProbe::fit(&train_ds.images, &train_ds.attributes, ProbeConfig::default()).unwrap(),
    ));
    let config = small(ModelKind::Resgan);
    let (mut t, _) = train(&config, &train_ds, &mut ()).unwrap();
    let pairs = make_pairs(&eval_ds, &config.degrade).unwrap();
    let a = t.evaluate(&pairs, &mut probe, "synth").unwrap();
    assert_eq!(a, t.evaluate(&pairs, &mut probe, "synth").unwrap());
    assert!((0.0..=1.0).contains(&a.accuracy) && a.loss.is_finite());
    let embedded = t.evaluate(&pairs, &mut Probe::Embedded, "synth").unwrap();
    assert!((0.0..=1.0).contains(&embedded.accuracy));
    assert!(matches!(eval_ds.split(24, 0, 0), Err(Error::Contract(_))));

    let (mut g, _) = train(&small(ModelKind::Dcgan), &train_ds, &mut ()).unwrap();
    assert!(matches!(g.evaluate(&pairs, &mut Probe::Embedded, "synth"), Err(Error::Contract(_))));
    assert!(g.evaluate(&pairs, &mut probe, "synth").is_ok());
}

#[test]
fn probe_reads_real_images() {
    let ds = synth(400, 11);
    let (train_ds, eval_ds) = ds.split(300, 100, 1).unwrap();
    let mut probe = ExternalProbe::fit(&train_ds.images, &train_ds.attributes, ProbeConfig::default()).unwrap();
    let acc = probe.accuracy(&eval_ds.images, &eval_ds.attributes).unwrap();
    assert!(acc >= 0.9, "{acc}");
    assert!(matches!(probe.predict(&Tensor::zeros(&[1, 1, 8, 8])), Err(Error::Shape(_))));
}

#[test]
fn sweep_averages_the_final_window() {
    let ds = synth(48, 6);
    let (train_ds, eval_ds) = ds.split(32, 16, 0).unwrap();
    let mut config = small(ModelKind::Resgan);
    config.epochs = 4;
    config.eval_window = 2;
    let pairs = make_pairs(&eval_ds, &config.degrade).unwrap();
    let mut sweep = SweepEvaluator::new(pairs, Probe::Embedded, "synth", config.epochs, config.eval_window);
    train(&config, &train_ds, &mut sweep).unwrap();
    assert_eq!(sweep.reports().len(), 2);
    let avg = sweep.average().unwrap();
    let r = sweep.reports();
    assert!((avg.accuracy - (r[0].accuracy + r[1].accuracy) / 2.0).abs() < 1e-15);
}
