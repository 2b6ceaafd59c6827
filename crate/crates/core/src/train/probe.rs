//! A small attribute classifier trained on real images only, used to score
//! generated images independently of any discriminator.

use rand::seq::SliceRandom;

use super::trainer::{argmax_hits, seeded};
use super::{Optimizer, OptimizerConfig};
use crate::error::{Error, Result};
use crate::models::{ImageShape, LEAKY_SLOPE};
use crate::nn::{Activation, Binder, LayerSpec, Mode, Sequential, INIT_STD};
use crate::objectives::DEFAULT_LOG_EPSILON;
use crate::tensor::{Tape, Tensor};

const INIT_STREAM: u64 = 4;
const ORDER_STREAM: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 15, batch_size: 32, lr: 3e-3, seed: 0 }
    }
}

/// Rescales the default Gaussian weights to He initialization.
fn he_scale(net: &mut Sequential) {
    for w in net.params_mut().filter(|p| p.ndim() >= 2) {
        let fan_in = if w.ndim() == 2 { w.shape()[0] } else { w.shape()[1..].iter().product() };
        let k = (2.0 / fan_in as f64).sqrt() / INIT_STD;
        w.data_mut().iter_mut().for_each(|v| *v *= k);
    }
}

/// Two strided convolutions, a hidden dense layer and one logistic output
/// per attribute, fit with per-attribute cross-entropy.
#[derive(Clone, Debug)]
pub struct ExternalProbe {
    net: Sequential,
    shape: ImageShape,
    d: usize,
}

impl ExternalProbe {
    /// Fits the probe to `images` `[N, C, H, W]` and `attributes` `[N, d]`.
    pub fn fit(images: &Tensor, attributes: &Tensor, config: ProbeConfig) -> Result<Self> {
        let (s, a) = (images.shape(), attributes.shape());
        if s.len() != 4 || a.len() != 2 || s[0] != a[0] || s[0] == 0 {
            return Err(Error::Shape(format!("probe needs [N, C, H, W] images with [N, d] attributes, got {s:?} and {a:?}")));
        }
        if config.epochs == 0 || config.batch_size == 0 {
            return Err(Error::Config("probe epochs and batch size must be positive".into()));
        }
        let shape = ImageShape::new(s[1], s[2], s[3]);
        let d = a[1];
        let half = |len: usize| (len + 2 - 3) / 2 + 1;
        let (h2, w2) = (half(half(shape.height)), half(half(shape.width)));
        let lrelu = LayerSpec::Activation(Activation::LeakyRelu(LEAKY_SLOPE));
        let specs = [
            LayerSpec::conv(shape.channels, 32, 3, 2, 1),
            lrelu.clone(),
            LayerSpec::conv(32, 64, 3, 2, 1),
            lrelu.clone(),
            LayerSpec::Flatten,
            LayerSpec::dense(64 * h2 * w2, 128),
            lrelu,
            LayerSpec::dense(128, d),
            LayerSpec::Activation(Activation::Sigmoid),
        ];
        let mut net = Sequential::build(&specs, &mut seeded(config.seed, INIT_STREAM))?;
        he_scale(&mut net);
        let mut opt = Optimizer::new(OptimizerConfig { lr: config.lr, beta1: 0.9, ..OptimizerConfig::default() })?;
        let mut order: Vec<usize> = (0..s[0]).collect();
        let mut rng = seeded(config.seed, ORDER_STREAM);
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                let tape = Tape::new();
                let mut binder = Binder::new(&tape, Mode::Train, true);
                let p = net.forward(tape.constant(images.select_rows(chunk)?), &mut binder)?;
                let y = attributes.select_rows(chunk)?;
                let eps = DEFAULT_LOG_EPSILON;
                let yv = tape.constant(y.clone());
                let ny = tape.constant(y.map(|v| 1.0 - v));
                let pos = yv.mul(p.clamp(eps, 1.0 - eps).log()?)?;
                let neg = ny.mul(p.one_minus().clamp(eps, 1.0 - eps).log()?)?;
                let loss = pos.add(neg)?.mean().neg();
                tape.backward(loss)?;
                opt.step(net.params_mut().collect(), &binder.grads())?;
            }
        }
        Ok(Self { net, shape, d })
    }

    pub fn attributes(&self) -> usize {
        self.d
    }

    /// Per-attribute probabilities `[N, d]`.
    pub fn predict(&mut self, images: &Tensor) -> Result<Tensor> {
        if images.ndim() != 4 || images.shape()[1..] != [self.shape.channels, self.shape.height, self.shape.width] {
            return Err(Error::Shape(format!("probe was fit to {:?} images, got {:?}", self.shape, images.shape())));
        }
        let mut rows = Vec::with_capacity(images.shape()[0] * self.d);
        for start in (0..images.shape()[0]).step_by(256) {
            let len = 256.min(images.shape()[0] - start);
            let tape = Tape::new();
            let mut binder = Binder::new(&tape, Mode::Eval, false);
            let out = self.net.forward(tape.constant(images.narrow(0, start, len)?), &mut binder)?;
            rows.extend_from_slice(out.value().data());
        }
        Tensor::new([images.shape()[0], self.d], rows)
    }

    /// Fraction of images whose most probable attribute is the true argmax.
    pub fn accuracy(&mut self, images: &Tensor, attributes: &Tensor) -> Result<f64> {
        if attributes.ndim() != 2 || attributes.shape() != [images.shape()[0], self.d] {
            return Err(Error::Shape(format!("expected [{}, {}] attributes, got {:?}", images.shape()[0], self.d, attributes.shape())));
        }
        if images.shape()[0] == 0 {
            return Err(Error::Contract("cannot score an empty set of images".into()));
        }
        let p = self.predict(images)?;
        Ok(argmax_hits(&p, attributes) as f64 / images.shape()[0] as f64)
    }
}
