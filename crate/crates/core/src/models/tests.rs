use super::*;
use crate::nn::Mode;
use crate::tensor::sigmoid;

fn mnist() -> ImageShape {
    ImageShape::new(1, 28, 28)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gen_input(config: &ModelConfig, n: usize, seed: u64) -> Tensor {
    let mut shape = vec![n];
    shape.extend(config.generator_input());
    match config.kind {
        ModelKind::Resgan => Tensor::uniform(&shape, 0.0, 1.0, &mut rng(seed)),
        _ => Tensor::uniform(&shape, -1.0, 1.0, &mut rng(seed)),
    }
}

fn one_hot_batch(n: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[n, d], |i| if i % d == (i / d) % d { 1.0 } else { 0.0 })
}

#[test]
fn resgan_restores_at_full_resolution() {
    let config = ModelConfig::new(ModelKind::Resgan, mnist(), 10, 42);
    let mut g = build_generator(&config).unwrap();
    let out = generate(&mut g, &gen_input(&config, 2, 0)).unwrap();
    assert_eq!(out.shape(), &[2, 1, 28, 28]);
    assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn gan_generator_is_a_dense_path() {
    let config = ModelConfig::new(ModelKind::Gan, mnist(), 10, 1);
    let mut g = build_generator(&config).unwrap();
    let dense: Vec<_> = g.parameters().iter().map(|p| p.shape().to_vec()).collect();
    assert_eq!(dense, vec![vec![100, 256], vec![256], vec![256, 784], vec![784]]);
    let out = generate(&mut g, &gen_input(&config, 3, 0)).unwrap();
    assert_eq!(out.shape(), &[3, 1, 28, 28]);
}

#[test]
fn every_kind_emits_image_shaped_outputs() {
    for shape in [mnist(), ImageShape::new(3, 32, 32)] {
        for kind in ModelKind::ALL {
            let d = if shape.channels == 3 { 100 } else { 10 };
            let config = ModelConfig::new(kind, shape, d, 5);
            let mut g = build_generator(&config).unwrap();
            let mut disc = build_discriminator(&config).unwrap();
            let fake = generate(&mut g, &gen_input(&config, 3, 1)).unwrap();
            assert_eq!(fake.shape(), &shape.batch(3), "{kind}");
            assert!(fake.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let y = one_hot_batch(3, d);
            let cond = (kind == ModelKind::Cgan).then_some(&y);
            let scores = discriminate(&mut disc, &fake, cond).unwrap();
            assert_eq!(scores.shape(), &[3, config.discriminator_outputs], "{kind}");
            assert!(scores.is_finite());
            if disc.output_activation() == OutputActivation::Logistic {
                assert!(scores.data().iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }
}

#[test]
fn initialization_is_a_pure_function_of_the_config() {
    for kind in ModelKind::ALL {
        let config = ModelConfig::new(kind, mnist(), 10, 9);
        assert_eq!(build_generator(&config).unwrap(), build_generator(&config).unwrap());
        assert_eq!(build_discriminator(&config).unwrap(), build_discriminator(&config).unwrap());
        let other = ModelConfig { seed: 10, ..config };
        assert_ne!(build_generator(&config).unwrap(), build_generator(&other).unwrap());
    }
    let config = ModelConfig::new(ModelKind::Resgan, mnist(), 10, 9);
    let mut g = build_generator(&config).unwrap();
    let x = gen_input(&config, 2, 4);
    assert_eq!(generate(&mut g.clone(), &x).unwrap(), generate(&mut g, &x).unwrap());
}

#[test]
fn add_mode_with_zeroed_branch_is_the_head_alone() {
    let config = ModelConfig::new(ModelKind::Resgan, mnist(), 10, 42).with_residual_mode(ResidualMode::Add);
    let mut g = build_generator(&config).unwrap();
    for p in g.branch_mut().unwrap().params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x = Tensor::full(&[2, 1, 28, 28], 0.5);
    let out = generate(&mut g, &x).unwrap();
    assert!(out.data().iter().all(|&v| v == sigmoid(0.5)));
    assert!((sigmoid(0.5) - 0.6225).abs() < 1e-4);
}

#[test]
fn concat_mode_keeps_the_coarse_block() {
    let config = ModelConfig::new(ModelKind::Resgan, ImageShape::new(3, 32, 32), 10, 3);
    let mut g = build_generator(&config).unwrap();
    let mut r = rng(8);
    for p in g.parameters_mut() {
        *p = Tensor::randn(p.shape(), 0.5, &mut r);
    }
    let x = gen_input(&config, 2, 11);
    let tape = Tape::new();
    let mut binder = Binder::new(&tape, Mode::Train, true);
    let trace = g.forward_traced(tape.constant(x.clone()), &mut binder).unwrap();
    let joined = trace.joined.unwrap().value();
    assert_eq!(joined.shape(), &[2, 6, 32, 32]);
    assert_eq!(joined.narrow(1, 0, 3).unwrap(), x);
}

#[test]
fn unsupported_sizes_are_config_errors() {
    for (h, w) in [(30, 30), (28, 30), (5, 5)] {
        let config = ModelConfig::new(ModelKind::Resgan, ImageShape::new(1, h, w), 10, 0);
        assert!(matches!(build_generator(&config), Err(Error::Config(_))), "{h}×{w}");
    }
    // Seven-pixel images pass the size check but leave nothing to upsample.
    let config = ModelConfig::new(ModelKind::Dcgan, ImageShape::new(1, 7, 7), 10, 0);
    assert!(matches!(build_generator(&config), Err(Error::Config(_))));
    assert!(build_generator(&ModelConfig::new(ModelKind::Resgan, config.shape, 10, 0)).is_ok());
}

#[test]
fn critic_must_be_scalar() {
    let config = ModelConfig { discriminator_outputs: 10, ..ModelConfig::new(ModelKind::Wgan, mnist(), 10, 0) };
    assert!(matches!(build_discriminator(&config), Err(Error::Config(_))));
    assert!(matches!(build_generator(&config), Err(Error::Config(_))));
}

#[test]
fn mismatched_inputs_are_shape_errors() {
    let config = ModelConfig::new(ModelKind::Resgan, mnist(), 10, 0);
    let mut g = build_generator(&config).unwrap();
    assert!(matches!(generate(&mut g, &Tensor::zeros(&[2, 1, 32, 32])), Err(Error::Shape(_))));
    let mut d = build_discriminator(&config).unwrap();
    assert!(matches!(discriminate(&mut d, &Tensor::zeros(&[2, 3, 28, 28]), None), Err(Error::Shape(_))));
    let config = ModelConfig::new(ModelKind::Cgan, mnist(), 10, 0);
    let mut g = build_generator(&config).unwrap();
    assert!(matches!(generate(&mut g, &Tensor::zeros(&[2, 100])), Err(Error::Shape(_))));
    let mut d = build_discriminator(&config).unwrap();
    let x = Tensor::zeros(&[2, 1, 28, 28]);
    assert!(matches!(discriminate(&mut d, &x, None), Err(Error::Contract(_))));
    assert!(matches!(discriminate(&mut d, &x, Some(&Tensor::zeros(&[2, 4]))), Err(Error::Shape(_))));
}

#[test]
fn conditioning_changes_the_score() {
    let config = ModelConfig::new(ModelKind::Cgan, mnist(), 10, 2);
    let mut d = build_discriminator(&config).unwrap();
    let x = Tensor::uniform(&[1, 1, 28, 28], 0.0, 1.0, &mut rng(1));
    let a = discriminate(&mut d, &x, Some(&one_hot_batch(1, 10))).unwrap();
    let mut y = Tensor::zeros(&[1, 10]);
    y.data_mut()[3] = 1.0;
    let b = discriminate(&mut d, &x, Some(&y)).unwrap();
    assert_ne!(a, b);
}

#[test]
fn clipping_bounds_the_whole_registry() {
    let config = ModelConfig::new(ModelKind::Wgan, mnist(), 10, 0);
    let mut d = build_discriminator(&config).unwrap();
    d.parameters_mut()[0].data_mut()[0] = 0.5;
    d.parameters_mut()[0].data_mut()[1] = -0.003;
    d.clip_weights(0.01);
    assert_eq!(d.parameters()[0].data()[0], 0.01);
    assert_eq!(d.parameters()[0].data()[1], -0.003);
    let max = d.parameters().iter().map(|p| p.max_abs()).fold(0.0, f64::max);
    assert!(max <= 0.01);
}

#[test]
fn attribute_vectors_are_validated() {
    assert!(AttributeVector::new(vec![0.0, 1.0, 0.0]).unwrap().is_one_hot());
    assert!(!AttributeVector::new(vec![0.5, 0.5]).unwrap().is_one_hot());
    assert!(matches!(AttributeVector::new(vec![1.5]), Err(Error::Domain(_))));
    assert!(matches!(AttributeVector::new(vec![]), Err(Error::Contract(_))));
    assert_eq!(AttributeVector::one_hot(7, 10).unwrap().argmax(), 7);
    assert_eq!(AttributeVector::new(vec![0.1, 0.7, 0.2]).unwrap().argmax(), 1);
    let z = NoisePrior::new(100).unwrap().sample(500, &mut rng(0));
    assert!(z.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(NoisePrior::new(0).is_err());
    assert_eq!("ResGAN".parse::<ModelKind>().unwrap(), ModelKind::Resgan);
    assert!("vae".parse::<ModelKind>().is_err());
}

/// Relative gradient error of `sum(w ⊙ D(G(input)))` over the input and a
/// strided sample of every generator and discriminator parameter. Probes
/// whose two evaluations straddle an activation kink are skipped.
fn end_to_end_grad_error(config: ModelConfig, n: usize) -> f64 {
    let mut g = build_generator(&config).unwrap();
    let mut d = build_discriminator(&config).unwrap();
    // A silent residual branch would pass no gradient to its inner layers.
    if let Some(branch) = g.branch_mut() {
        let mut r = rng(23);
        for p in branch.params_mut() {
            *p = Tensor::randn(p.shape(), 0.3, &mut r).map(|v| v + 0.5);
        }
    }
    let x = gen_input(&config, n, 21);
    let y = one_hot_batch(n, config.attributes);
    let weights = Tensor::uniform(&[n, config.discriminator_outputs], -1.0, 1.0, &mut rng(22));

    let eval = |g: &mut Generator, d: &mut Discriminator, x: &Tensor, backward: bool| {
        let tape = Tape::new();
        let mut gb = Binder::new(&tape, Mode::Train, true).freeze_buffers();
        let mut db = Binder::new(&tape, Mode::Train, true).freeze_buffers();
        let input = tape.var(x.clone());
        let cond = (config.kind == ModelKind::Cgan).then(|| tape.constant(y.clone()));
        let fake = g.forward(input, &mut gb).unwrap();
        let score = d.forward(fake, cond, &mut db).unwrap();
        let loss = score.mul(tape.constant(weights.clone())).unwrap().sum();
        let value = loss.value().data()[0];
        let mut grads = vec![];
        if backward {
            tape.backward(loss).unwrap();
            grads.push(input.grad().unwrap());
            grads.extend(gb.grads());
            grads.extend(db.grads());
        }
        (value, tape.kink_pattern(), grads)
    };
    let (_, _, analytic) = eval(&mut g, &mut d, &x, true);

    let eps = 1e-5;
    let (mut worst, mut probes, mut skipped) = (0.0f64, 0, 0);
    let mut compare = |a: f64, plus: (f64, Vec<bool>, Vec<Tensor>), minus: (f64, Vec<bool>, Vec<Tensor>)| {
        probes += 1;
        if plus.1 != minus.1 {
            skipped += 1;
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * eps);
        worst = worst.max((a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs()));
    };
    let stride = |len: usize| (len / 12).max(1);
    for i in (0..x.len()).step_by(stride(x.len())) {
        let mut p = x.clone();
        p.data_mut()[i] += eps;
        let plus = eval(&mut g, &mut d, &p, false);
        p.data_mut()[i] -= 2.0 * eps;
        let minus = eval(&mut g, &mut d, &p, false);
        compare(analytic[0].data()[i], plus, minus);
    }
    let g_count = g.parameters().len();
    let d_count = d.parameters().len();
    for k in 0..g_count + d_count {
        let len = if k < g_count { g.parameters()[k].len() } else { d.parameters()[k - g_count].len() };
        for i in (0..len).step_by(stride(len)) {
            let nudge = |g: &mut Generator, d: &mut Discriminator, delta: f64| {
                if k < g_count {
                    g.parameters_mut()[k].data_mut()[i] += delta;
                } else {
                    d.parameters_mut()[k - g_count].data_mut()[i] += delta;
                }
            };
            nudge(&mut g, &mut d, eps);
            let plus = eval(&mut g, &mut d, &x, false);
            nudge(&mut g, &mut d, -2.0 * eps);
            let minus = eval(&mut g, &mut d, &x, false);
            nudge(&mut g, &mut d, eps);
            compare(analytic[1 + k].data()[i], plus, minus);
        }
    }
    assert!(skipped * 10 <= probes, "{skipped} of {probes} probes straddled a kink");
    worst
}

#[test]
fn models_pass_end_to_end_gradient_checks() {
    for kind in ModelKind::ALL {
        let side = if kind.restores() { 8 } else { 16 };
        let mut config = ModelConfig::new(kind, ImageShape::new(1, side, side), 3, 13);
        config.noise_dim = 6;
        let err = end_to_end_grad_error(config, 3);
        assert!(err < 1e-4, "{kind}: {err}");
    }
    let add = ModelConfig::new(ModelKind::Resgan, ImageShape::new(2, 8, 8), 2, 4).with_residual_mode(ResidualMode::Add);
    assert!(end_to_end_grad_error(add, 2) < 1e-4);
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    for kind in ModelKind::ALL {
        let config = ModelConfig::new(kind, mnist(), 10, 77);
        let mut g = build_generator(&config).unwrap();
        let d = build_discriminator(&config).unwrap();
        // Move batchnorm buffers away from their initial values.
        if config.kind != ModelKind::Gan {
            let tape = Tape::new();
            let mut binder = Binder::new(&tape, Mode::Train, false);
            g.forward(tape.constant(gen_input(&config, 4, 3)), &mut binder).unwrap();
        }
        let ckpt = Checkpoint::new(g, d, 12).unwrap();
        let bytes = ckpt.to_bytes();
        assert_eq!(&bytes[..4], b"RGAN");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), bytes);
    }
}

#[test]
fn corrupt_checkpoints_report_offsets() {
    let config = ModelConfig::new(ModelKind::Gan, mnist(), 10, 1);
    let ckpt = Checkpoint::new(build_generator(&config).unwrap(), build_discriminator(&config).unwrap(), 0).unwrap();
    let bytes = ckpt.to_bytes();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 4, .. })));
    let cut = bytes.len() - 3;
    match Checkpoint::from_bytes(&bytes[..cut]) {
        Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
        other => panic!("expected a format error, got {other:?}"),
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Format { .. })));
}

#[test]
fn concat_generator_starts_near_its_input() {
    let config = ModelConfig::new(ModelKind::Resgan, mnist(), 10, 5);
    let mut g = build_generator(&config).unwrap();
    let x = Tensor::from_fn(&[2, 1, 28, 28], |i| if (i / 3) % 2 == 0 { 0.0 } else { 1.0 });
    let out = generate(&mut g, &x).unwrap();
    assert!(max_gap(&out, &x) < 0.007, "{}", max_gap(&out, &x));
}

fn max_gap(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
