//! Layer vocabulary: convolution, transposed convolution, batch
//! normalization, dense, pooling, upsampling, activations, and the
//! channel-concatenating residual join.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{ConvGeometry, Tape, Tensor, Var};

/// Standard deviation of the zero-mean Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self { momentum: 0.9, epsilon: 1e-5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    pub fn apply<'t>(&self, x: Var<'t>) -> Var<'t> {
        match *self {
            Activation::Identity => x,
            Activation::Sigmoid => x.sigmoid(),
            Activation::Relu => x.relu(),
            Activation::LeakyRelu(s) => x.leaky_relu(s),
            Activation::Tanh => x.tanh(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Deconv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    BatchNorm { channels: usize, config: BatchNormConfig },
    Dense { in_features: usize, out_features: usize },
    AvgPool { window: usize, stride: usize },
    UpsampleNearest { factor: usize },
    Activation(Activation),
    /// Reshape every example to `shape`, keeping the batch axis.
    Reshape(Vec<usize>),
    Flatten,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding }
    }

    pub fn deconv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Deconv2d { in_channels, out_channels, kernel, stride, padding }
    }

    pub fn dense(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Dense { in_features, out_features }
    }

    pub fn batchnorm(channels: usize, config: BatchNormConfig) -> Self {
        LayerSpec::BatchNorm { channels, config }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, .. }
            | LayerSpec::Deconv2d { in_channels, out_channels, kernel, stride, .. } => {
                *in_channels >= 1 && *out_channels >= 1 && *kernel >= 1 && *stride >= 1
            }
            LayerSpec::BatchNorm { channels, config } => {
                *channels >= 1 && config.epsilon > 0.0 && (0.0..=1.0).contains(&config.momentum)
            }
            LayerSpec::Dense { in_features, out_features } => *in_features >= 1 && *out_features >= 1,
            LayerSpec::AvgPool { window, stride } => *window >= 1 && *stride >= 1,
            LayerSpec::UpsampleNearest { factor } => *factor >= 1,
            LayerSpec::Reshape(shape) => !shape.is_empty() && shape.iter().all(|&d| d >= 1),
            LayerSpec::Activation(_) | LayerSpec::Flatten => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid layer hyperparameters: {self:?}")))
        }
    }

    /// Instantiates the layer with Gaussian(0, 0.02) weights and zero biases.
    pub fn build(&self, rng: &mut impl Rng) -> Result<Layer> {
        self.validate()?;
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                params.push(named("weight", Tensor::randn(&[out_channels, in_channels, kernel, kernel], INIT_STD, rng)));
                params.push(named("bias", Tensor::zeros(&[out_channels])));
            }
            LayerSpec::Deconv2d { in_channels, out_channels, kernel, .. } => {
                params.push(named("weight", Tensor::randn(&[in_channels, out_channels, kernel, kernel], INIT_STD, rng)));
                params.push(named("bias", Tensor::zeros(&[out_channels])));
            }
            LayerSpec::Dense { in_features, out_features } => {
                params.push(named("weight", Tensor::randn(&[in_features, out_features], INIT_STD, rng)));
                params.push(named("bias", Tensor::zeros(&[out_features])));
            }
            LayerSpec::BatchNorm { channels, .. } => {
                params.push(named("gamma", Tensor::ones(&[channels])));
                params.push(named("beta", Tensor::zeros(&[channels])));
                buffers.push(named("running_mean", Tensor::zeros(&[channels])));
                buffers.push(named("running_var", Tensor::ones(&[channels])));
            }
            _ => {}
        }
        Ok(Layer { spec: self.clone(), state: LayerState { params, buffers } })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: &'static str,
    pub value: Tensor,
}

fn named(name: &'static str, value: Tensor) -> NamedTensor {
    NamedTensor { name, value }
}

/// Trainable parameters and running buffers of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub params: Vec<NamedTensor>,
    pub buffers: Vec<NamedTensor>,
}

/// Places parameters on a tape for one forward pass and remembers the
/// resulting variables, in binding order, so gradients can be collected.
pub struct Binder<'t> {
    tape: &'t Tape,
    mode: Mode,
    trainable: bool,
    update_buffers: bool,
    bound: Vec<Var<'t>>,
}

impl<'t> Binder<'t> {
    /// Parameters are tracked when `trainable`; running buffers are updated in train mode.
    pub fn new(tape: &'t Tape, mode: Mode, trainable: bool) -> Self {
        Self { tape, mode, trainable, update_buffers: mode == Mode::Train, bound: Vec::new() }
    }

    /// Use batch statistics without touching running buffers.
    pub fn freeze_buffers(mut self) -> Self {
        self.update_buffers = false;
        self
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn bind(&mut self, value: &Tensor) -> Var<'t> {
        let v = self.tape.leaf(value.clone(), self.trainable);
        self.bound.push(v);
        v
    }

    pub fn bound(&self) -> &[Var<'t>] {
        &self.bound
    }

    /// Gradient of every bound parameter, zeros where none arrived.
    pub fn grads(&self) -> Vec<Tensor> {
        self.bound
            .iter()
            .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub state: LayerState,
}

impl Layer {
    pub fn forward<'t>(&mut self, x: Var<'t>, binder: &mut Binder<'t>) -> Result<Var<'t>> {
        match self.spec.clone() {
            LayerSpec::Conv2d { in_channels, kernel, stride, padding, .. }
            | LayerSpec::Deconv2d { in_channels, kernel, stride, padding, .. } => {
                let shape = x.shape();
                if shape.len() != 4 || shape[1] != in_channels {
                    return shape_err(format!("layer expects {in_channels} input channels, got {shape:?}"));
                }
                let w = binder.bind(&self.state.params[0].value);
                let b = binder.bind(&self.state.params[1].value);
                let geom = ConvGeometry::new(kernel, stride, padding);
                if matches!(self.spec, LayerSpec::Conv2d { .. }) {
                    x.conv2d(w, Some(b), geom)
                } else {
                    x.deconv2d(w, Some(b), geom)
                }
            }
            LayerSpec::Dense { in_features, .. } => {
                let shape = x.shape();
                if shape.len() != 2 || shape[1] != in_features {
                    return shape_err(format!("dense layer expects [N, {in_features}], got {shape:?}"));
                }
                let w = binder.bind(&self.state.params[0].value);
                let b = binder.bind(&self.state.params[1].value);
                x.matmul(w)?.add(b)
            }
            LayerSpec::BatchNorm { config, .. } => self.batchnorm(x, binder, config),
            LayerSpec::AvgPool { window, stride } => x.avg_pool(window, stride),
            LayerSpec::UpsampleNearest { factor } => x.upsample_nearest(factor),
            LayerSpec::Activation(a) => Ok(a.apply(x)),
            LayerSpec::Reshape(shape) => {
                let mut full = vec![x.shape()[0]];
                full.extend_from_slice(&shape);
                x.reshape(&full)
            }
            LayerSpec::Flatten => x.flatten(),
        }
    }

    fn batchnorm<'t>(&mut self, x: Var<'t>, binder: &mut Binder<'t>, config: BatchNormConfig) -> Result<Var<'t>> {
        let gamma = binder.bind(&self.state.params[0].value);
        let beta = binder.bind(&self.state.params[1].value);
        if binder.mode == Mode::Eval {
            let mean = self.state.buffers[0].value.data().to_vec();
            let var = self.state.buffers[1].value.data().to_vec();
            return x.batchnorm_eval(gamma, beta, &mean, &var, config.epsilon);
        }
        let (out, mean, var) = x.batchnorm_train(gamma, beta, config.epsilon)?;
        if binder.update_buffers {
            let shape = x.shape();
            let count = (shape[0] * shape[2..].iter().product::<usize>()) as f64;
            let unbiased = count / (count - 1.0);
            let m = config.momentum;
            let (rm, rv) = self.state.buffers.split_at_mut(1);
            for (r, b) in rm[0].value.data_mut().iter_mut().zip(&mean) {
                *r = m * *r + (1.0 - m) * b;
            }
            for (r, b) in rv[0].value.data_mut().iter_mut().zip(&var) {
                *r = m * *r + (1.0 - m) * b * unbiased;
            }
        }
        Ok(out)
    }
}

/// An ordered stack of layers.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn build(specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self> {
        let layers = specs.iter().map(|s| s.build(rng)).collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward<'t>(&mut self, mut x: Var<'t>, binder: &mut Binder<'t>) -> Result<Var<'t>> {
        for layer in &mut self.layers {
            x = layer.forward(x, binder)?;
        }
        Ok(x)
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| l.state.params.iter().map(|p| &p.value))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.state.params.iter_mut().map(|p| &mut p.value))
    }

    /// Parameters then buffers of each layer, named `prefix.<index>.<name>`.
    pub fn state_entries(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for t in l.state.params.iter().chain(&l.state.buffers) {
                out.push((format!("{prefix}.{i}.{}", t.name), &t.value));
            }
        }
        out
    }

    pub fn state_entries_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            let LayerState { params, buffers } = &mut l.state;
            for t in params.iter_mut().chain(buffers.iter_mut()) {
                out.push((format!("{prefix}.{i}.{}", t.name), &mut t.value));
            }
        }
        out
    }
}

/// Joins the pass-through input and a branch output along the channel axis,
/// input channels first.
pub fn concat_residual<'t>(input: Var<'t>, branch: Var<'t>) -> Result<Var<'t>> {
    let (a, b) = (input.shape(), branch.shape());
    if a.len() != 4 || b.len() != 4 || a[0] != b[0] || a[2..] != b[2..] {
        return shape_err(format!("residual join of {a:?} with {b:?}: batch and spatial sizes must agree"));
    }
    Var::concat(&[input, branch], 1)
}
