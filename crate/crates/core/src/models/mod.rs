//! Generator and discriminator networks for the five model families.
//!
//! The restoration generator takes the coarse image itself as input and
//! carries it past a convolutional branch to the output head. The baselines
//! generate from uniform noise, with CGAN also appending the attribute vector.

mod checkpoint;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::nn::{concat_residual, Activation, BatchNormConfig, Binder, LayerSpec, Mode, Sequential};
use crate::tensor::{Tape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;
/// Initial head weight from each pass-through channel to its output channel.
pub const PASS_THROUGH_GAIN: f64 = 10.0;
/// Initial head weight from each residual-branch channel to its output
/// channel. Small enough that the discriminator leads early in training.
pub const BRANCH_GAIN: f64 = 0.2;
pub const DEFAULT_NOISE_DIM: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Gan,
    Dcgan,
    Wgan,
    Cgan,
    Resgan,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Gan, ModelKind::Dcgan, ModelKind::Wgan, ModelKind::Cgan, ModelKind::Resgan];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Gan => "gan",
            ModelKind::Dcgan => "dcgan",
            ModelKind::Wgan => "wgan",
            ModelKind::Cgan => "cgan",
            ModelKind::Resgan => "resgan",
        }
    }

    /// Table-style row label.
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Gan => "GAN",
            ModelKind::Dcgan => "DCGAN",
            ModelKind::Wgan => "WGAN",
            ModelKind::Cgan => "CGAN",
            ModelKind::Resgan => "ResGAN",
        }
    }

    pub(crate) fn code(&self) -> u8 {
        ModelKind::ALL.iter().position(|k| k == self).expect("listed") as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        ModelKind::ALL.get(code as usize).copied()
    }

    /// Whether the generator consumes a coarse image rather than noise.
    pub fn restores(&self) -> bool {
        matches!(self, ModelKind::Resgan)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}` (expected gan, dcgan, wgan, cgan or resgan)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualMode {
    /// Channel concatenation of the pass-through and branch, then a 1×1 head.
    Concat,
    /// `sigmoid(g(x) + x)`.
    Add,
}

impl FromStr for ResidualMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(ResidualMode::Concat),
            "add" => Ok(ResidualMode::Add),
            other => Err(Error::Config(format!("unknown residual mode `{other}` (expected concat or add)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn batch(&self, n: usize) -> [usize; 4] {
        [n, self.channels, self.height, self.width]
    }

    /// `s` such that both sides equal 7·2ˢ or 8·2ˢ.
    pub fn doublings(&self) -> Result<usize> {
        let fits = |len: usize, s: usize| len % (1 << s) == 0 && matches!(len >> s, 7 | 8);
        if self.channels == 0 {
            return Err(Error::Config("images need at least one channel".into()));
        }
        (0..16)
            .find(|&s| fits(self.height, s) && fits(self.width, s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unsupported image size {}×{}: sides must be 7 or 8 times a power of two",
                    self.height, self.width
                ))
            })
    }
}

/// `d` independent Bernoulli attribute labels, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeVector(Vec<f64>);

impl AttributeVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Contract("attribute vectors need d ≥ 1".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("attribute value {v} outside [0, 1]")));
        }
        Ok(Self(values))
    }

    pub fn one_hot(index: usize, d: usize) -> Result<Self> {
        if index >= d {
            return Err(Error::Contract(format!("class {index} out of range for d = {d}")));
        }
        let mut v = vec![0.0; d];
        v[index] = 1.0;
        Ok(Self(v))
    }

    pub fn d(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn is_one_hot(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0 || v == 1.0) && self.0.iter().filter(|&&v| v == 1.0).count() == 1
    }

    /// Index of the largest entry, the first on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Uniform noise on `[−1, 1]` feeding the baseline generators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoisePrior {
    pub dim: usize,
}

impl NoisePrior {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("noise dimension must be at least 1".into()));
        }
        Ok(Self { dim })
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Tensor {
        Tensor::uniform(&[n, self.dim], -1.0, 1.0, rng)
    }
}

/// Everything that determines a pair of freshly initialized networks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub shape: ImageShape,
    /// Attribute count `d` of the dataset.
    pub attributes: usize,
    /// Width of the discriminator's output (`d` for resgan, 1 otherwise).
    pub discriminator_outputs: usize,
    pub noise_dim: usize,
    pub residual_mode: ResidualMode,
    pub batchnorm: BatchNormConfig,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, shape: ImageShape, attributes: usize, seed: u64) -> Self {
        Self {
            kind,
            shape,
            attributes,
            discriminator_outputs: if kind == ModelKind::Resgan { attributes } else { 1 },
            noise_dim: DEFAULT_NOISE_DIM,
            residual_mode: ResidualMode::Concat,
            batchnorm: BatchNormConfig::default(),
            seed,
        }
    }

    pub fn with_residual_mode(mut self, mode: ResidualMode) -> Self {
        self.residual_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.doublings()?;
        if self.attributes == 0 {
            return Err(Error::Config("attribute count d must be at least 1".into()));
        }
        NoisePrior::new(self.noise_dim)?;
        match self.kind {
            ModelKind::Wgan if self.discriminator_outputs != 1 => Err(Error::Config(format!(
                "the wasserstein critic emits one score, not d = {}",
                self.discriminator_outputs
            ))),
            ModelKind::Resgan if self.discriminator_outputs != self.attributes => Err(Error::Config(
                "the classifier-embedded discriminator emits one response per attribute".into(),
            )),
            ModelKind::Gan | ModelKind::Dcgan | ModelKind::Cgan if self.discriminator_outputs != 1 => {
                Err(Error::Config(format!("{} discriminators emit a single real/fake probability", self.kind)))
            }
            _ => Ok(()),
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Per-example generator input shape.
    pub fn generator_input(&self) -> Vec<usize> {
        match self.kind {
            ModelKind::Resgan => vec![self.shape.channels, self.shape.height, self.shape.width],
            ModelKind::Cgan => vec![self.noise_dim + self.attributes],
            _ => vec![self.noise_dim],
        }
    }
}

/// Output of a generator pass with the pass-through join exposed.
pub struct GeneratorTrace<'t> {
    /// Concat mode: `[X_r ‖ g(X_r)]`. Add mode: `g(X_r) + X_r`.
    pub joined: Option<Var<'t>>,
    pub output: Var<'t>,
}

#[derive(Clone, Debug, PartialEq)]
enum GeneratorArch {
    Residual { branch: Sequential, head: Sequential, mode: ResidualMode },
    Latent { body: Sequential },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    config: ModelConfig,
    arch: GeneratorArch,
}

impl Generator {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_shape(&self, batch: usize) -> Vec<usize> {
        let mut s = vec![batch];
        s.extend(self.config.generator_input());
        s
    }

    pub fn forward<'t>(&mut self, input: Var<'t>, binder: &mut Binder<'t>) -> Result<Var<'t>> {
        Ok(self.forward_traced(input, binder)?.output)
    }

    pub fn forward_traced<'t>(&mut self, input: Var<'t>, binder: &mut Binder<'t>) -> Result<GeneratorTrace<'t>> {
        let shape = input.shape();
        if shape.len() < 2 || shape[1..] != self.config.generator_input()[..] {
            return shape_err(format!(
                "{} generator expects input [N, {:?}], got {shape:?}",
                self.config.kind,
                self.config.generator_input()
            ));
        }
        match &mut self.arch {
            GeneratorArch::Residual { branch, head, mode } => {
                let residual = branch.forward(input, binder)?;
                let joined = match mode {
                    ResidualMode::Concat => concat_residual(input, residual)?,
                    ResidualMode::Add => residual.add(input)?,
                };
                let output = head.forward(joined, binder)?;
                Ok(GeneratorTrace { joined: Some(joined), output })
            }
            GeneratorArch::Latent { body } => Ok(GeneratorTrace { joined: None, output: body.forward(input, binder)? }),
        }
    }

    fn parts(&self) -> Vec<(&'static str, &Sequential)> {
        match &self.arch {
            GeneratorArch::Residual { branch, head, .. } => vec![("g.branch", branch), ("g.head", head)],
            GeneratorArch::Latent { body } => vec![("g.body", body)],
        }
    }

    fn parts_mut(&mut self) -> Vec<(&'static str, &mut Sequential)> {
        match &mut self.arch {
            GeneratorArch::Residual { branch, head, .. } => vec![("g.branch", branch), ("g.head", head)],
            GeneratorArch::Latent { body } => vec![("g.body", body)],
        }
    }

    /// Parameters in binding order.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.parts().into_iter().flat_map(|(_, s)| s.params()).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.parts_mut().into_iter().flat_map(|(_, s)| s.params_mut()).collect()
    }

    pub fn state_entries(&self) -> Vec<(String, &Tensor)> {
        self.parts().into_iter().flat_map(|(p, s)| s.state_entries(p)).collect()
    }

    pub fn state_entries_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.parts_mut().into_iter().flat_map(|(p, s)| s.state_entries_mut(p)).collect()
    }

    /// The convolutional branch `g(·)` of a restoration generator.
    pub fn branch_mut(&mut self) -> Option<&mut Sequential> {
        match &mut self.arch {
            GeneratorArch::Residual { branch, .. } => Some(branch),
            GeneratorArch::Latent { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    /// Per-entry sigmoid probabilities.
    Logistic,
    /// Unbounded critic scores.
    Wasserstein,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    config: ModelConfig,
    body: Sequential,
    output: OutputActivation,
}

impl Discriminator {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn outputs(&self) -> usize {
        self.config.discriminator_outputs
    }

    /// Scores images `[N, C, H, W]`. CGAN needs the attributes `[N, d]`,
    /// which are tiled over the image plane and appended as channels.
    pub fn forward<'t>(&mut self, x: Var<'t>, attributes: Option<Var<'t>>, binder: &mut Binder<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let s = self.config.shape;
        if shape.len() != 4 || shape[1..] != [s.channels, s.height, s.width] {
            return shape_err(format!("discriminator expects [N, {}, {}, {}], got {shape:?}", s.channels, s.height, s.width));
        }
        let input = match (self.config.kind, attributes) {
            (ModelKind::Cgan, Some(y)) => {
                let n = shape[0];
                if y.shape() != [n, self.config.attributes] {
                    return shape_err(format!("attributes {:?} do not match [{n}, {}]", y.shape(), self.config.attributes));
                }
                let plane = binder.tape().constant(Tensor::ones(&[1, 1, s.height, s.width]));
                let tiled = y.reshape(&[n, self.config.attributes, 1, 1])?.mul(plane)?;
                Var::concat(&[x, tiled], 1)?
            }
            (ModelKind::Cgan, None) => {
                return Err(Error::Contract("the conditional discriminator needs attributes".into()));
            }
            _ => x,
        };
        let scores = self.body.forward(input, binder)?;
        Ok(match self.output {
            OutputActivation::Logistic => scores.sigmoid(),
            OutputActivation::Wasserstein => scores,
        })
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.body.params().collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.body.params_mut().collect()
    }

    pub fn state_entries(&self) -> Vec<(String, &Tensor)> {
        self.body.state_entries("d.body")
    }

    pub fn state_entries_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.body.state_entries_mut("d.body")
    }

    /// Clamps every parameter entry into `[−c, c]`.
    pub fn clip_weights(&mut self, c: f64) {
        assert!(c > 0.0, "clip bound must be positive");
        for p in self.parameters_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = v.clamp(-c, c));
        }
    }
}

/// Starts the 1×1 concat head as `sigmoid(k·(x − ½) + b·g)` for pass-through
/// gain `k` and branch gain `b`: with a silent branch, 0 and 1 map to within
/// 0.007 of themselves.
fn init_pass_through(head: &mut Sequential, channels: usize) {
    let mut params = head.params_mut();
    let weight = params.next().expect("head convolution weight");
    for o in 0..channels {
        weight.data_mut()[o * 2 * channels + o] = PASS_THROUGH_GAIN;
        weight.data_mut()[o * 2 * channels + channels + o] = BRANCH_GAIN;
    }
    let bias = params.next().expect("head convolution bias");
    bias.data_mut().iter_mut().for_each(|b| *b = -PASS_THROUGH_GAIN / 2.0);
}

/// Encoder/decoder residual branch: strided convolutions halve the
/// resolution up to twice (while both sides stay even), a bottleneck
/// convolution mixes the coarse-scale features and transposed convolutions
/// return to full resolution.
fn residual_branch(config: &ModelConfig, lrelu: LayerSpec) -> Vec<LayerSpec> {
    let (s, bn) = (config.shape, config.batchnorm);
    let halvings = s.height.trailing_zeros().min(s.width.trailing_zeros()).min(2) as usize;
    let block = |specs: &mut Vec<LayerSpec>, layer: LayerSpec, channels: usize| {
        specs.push(layer);
        specs.push(LayerSpec::batchnorm(channels, bn));
        specs.push(lrelu.clone());
    };
    let mut specs = Vec::new();
    let mut width = 16;
    block(&mut specs, LayerSpec::conv(s.channels, width, 3, 1, 1), width);
    for _ in 0..halvings {
        block(&mut specs, LayerSpec::conv(width, 2 * width, 3, 2, 1), 2 * width);
        width *= 2;
    }
    block(&mut specs, LayerSpec::conv(width, width, 3, 1, 1), width);
    for _ in 0..halvings {
        block(&mut specs, LayerSpec::deconv(width, width / 2, 4, 2, 1), width / 2);
        width /= 2;
    }
    specs.push(LayerSpec::conv(width, s.channels, 3, 1, 1));
    specs
}

pub fn build_generator(config: &ModelConfig) -> Result<Generator> {
    config.validate()?;
    let mut rng = config.rng(0);
    let s = config.shape;
    let c = s.channels;
    let lrelu = LayerSpec::Activation(Activation::LeakyRelu(LEAKY_SLOPE));
    let arch = match config.kind {
        ModelKind::Resgan => {
            let branch = residual_branch(config, lrelu);
            let head = match config.residual_mode {
                ResidualMode::Concat => vec![LayerSpec::conv(2 * c, c, 1, 1, 0), LayerSpec::Activation(Activation::Sigmoid)],
                ResidualMode::Add => vec![LayerSpec::Activation(Activation::Sigmoid)],
            };
            let mut branch = Sequential::build(&branch, &mut rng)?;
            // The branch starts silent, so the generator starts at the coarse input.
            if let Some(last) = branch.layers.last_mut() {
                last.state.params.iter_mut().for_each(|p| p.value = Tensor::zeros(p.value.shape()));
            }
            let mut head = Sequential::build(&head, &mut rng)?;
            if config.residual_mode == ResidualMode::Concat {
                init_pass_through(&mut head, c);
            }
            GeneratorArch::Residual { branch, head, mode: config.residual_mode }
        }
        ModelKind::Gan => {
            let specs = [
                LayerSpec::dense(config.noise_dim, 256),
                lrelu,
                LayerSpec::dense(256, s.numel()),
                LayerSpec::Activation(Activation::Sigmoid),
                LayerSpec::Reshape(vec![c, s.height, s.width]),
            ];
            GeneratorArch::Latent { body: Sequential::build(&specs, &mut rng)? }
        }
        ModelKind::Dcgan | ModelKind::Wgan | ModelKind::Cgan => {
            let stages = s.doublings()?;
            if stages == 0 {
                return Err(Error::Config(format!(
                    "the deconvolution generator needs at least one doubling; {}×{} has none",
                    s.height, s.width
                )));
            }
            let inputs = config.generator_input()[0];
            let (h0, w0) = (s.height >> stages, s.width >> stages);
            let mut channels = 64 << (stages - 1);
            let mut specs = vec![
                LayerSpec::dense(inputs, channels * h0 * w0),
                LayerSpec::Reshape(vec![channels, h0, w0]),
                LayerSpec::batchnorm(channels, config.batchnorm),
                LayerSpec::Activation(Activation::Relu),
            ];
            for stage in 0..stages {
                let last = stage + 1 == stages;
                let next = if last { c } else { channels / 2 };
                specs.push(LayerSpec::deconv(channels, next, 4, 2, 1));
                if last {
                    specs.push(LayerSpec::Activation(Activation::Sigmoid));
                } else {
                    specs.push(LayerSpec::batchnorm(next, config.batchnorm));
                    specs.push(LayerSpec::Activation(Activation::Relu));
                }
                channels = next;
            }
            GeneratorArch::Latent { body: Sequential::build(&specs, &mut rng)? }
        }
    };
    Ok(Generator { config: *config, arch })
}

pub fn build_discriminator(config: &ModelConfig) -> Result<Discriminator> {
    config.validate()?;
    let mut rng = config.rng(1);
    let s = config.shape;
    let lrelu = LayerSpec::Activation(Activation::LeakyRelu(LEAKY_SLOPE));
    let outputs = config.discriminator_outputs;
    let specs = match config.kind {
        ModelKind::Gan => vec![
            LayerSpec::Flatten,
            LayerSpec::dense(s.numel(), 256),
            lrelu,
            LayerSpec::dense(256, outputs),
        ],
        _ => {
            let in_channels = s.channels + if config.kind == ModelKind::Cgan { config.attributes } else { 0 };
            let half = |len: usize| (len + 2 - 3) / 2 + 1;
            let (h2, w2) = (half(half(s.height)), half(half(s.width)));
            vec![
                LayerSpec::conv(in_channels, 32, 3, 2, 1),
                lrelu.clone(),
                LayerSpec::conv(32, 64, 3, 2, 1),
                lrelu,
                LayerSpec::Flatten,
                LayerSpec::dense(64 * h2 * w2, outputs),
            ]
        }
    };
    let output = if config.kind == ModelKind::Wgan { OutputActivation::Wasserstein } else { OutputActivation::Logistic };
    Ok(Discriminator { config: *config, body: Sequential::build(&specs, &mut rng)?, output })
}

/// Eval-mode generator pass outside any training graph.
pub fn generate(net: &mut Generator, input: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let mut binder = Binder::new(&tape, Mode::Eval, false);
    let out = net.forward(tape.constant(input.clone()), &mut binder)?;
    Ok(out.value().as_ref().clone())
}

/// Eval-mode discriminator pass; `attributes` is required for CGAN only.
pub fn discriminate(net: &mut Discriminator, x: &Tensor, attributes: Option<&Tensor>) -> Result<Tensor> {
    let tape = Tape::new();
    let mut binder = Binder::new(&tape, Mode::Eval, false);
    let y = attributes.map(|a| tape.constant(a.clone()));
    let out = net.forward(tape.constant(x.clone()), y, &mut binder)?;
    Ok(out.value().as_ref().clone())
}

#[cfg(test)]
mod tests;
