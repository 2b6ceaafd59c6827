use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}` (expected sgd or adam)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { kind: OptimizerKind::Adam, lr: 2e-4, beta1: 0.5, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl OptimizerConfig {
    /// A zero learning rate is accepted and freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// First-order update rule with its per-parameter state.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    config: OptimizerConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, m: Vec::new(), v: Vec::new(), t: 0 })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descends `params` along `grads`, paired by position.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.shape() != g.shape()) {
            return Err(Error::Contract("every parameter needs a gradient of its own shape".into()));
        }
        let c = self.config;
        self.t += 1;
        match c.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    p.data_mut().iter_mut().zip(g.data()).for_each(|(p, g)| *p -= c.lr * g);
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.v = self.m.clone();
                }
                let bc1 = 1.0 - c.beta1.powi(self.t as i32);
                let bc2 = 1.0 - c.beta2.powi(self.t as i32);
                for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for (i, (p, &g)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                        *p -= c.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_descent(kind: OptimizerKind, lr: f64) -> f64 {
        let mut opt = Optimizer::new(OptimizerConfig { kind, lr, ..OptimizerConfig::default() }).unwrap();
        let mut x = Tensor::new([2], vec![3.0, -2.0]).unwrap();
        for _ in 0..500 {
            let g = x.map(|v| 2.0 * v);
            opt.step(vec![&mut x], &[g]).unwrap();
        }
        x.data().iter().map(|v| v * v).sum()
    }

    #[test]
    fn both_rules_minimize_a_quadratic() {
        assert!(quadratic_descent(OptimizerKind::Sgd, 0.1) < 1e-10);
        assert!(quadratic_descent(OptimizerKind::Adam, 0.05) < 1e-3);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut opt = Optimizer::new(OptimizerConfig { kind, ..OptimizerConfig::default() }).unwrap();
            let mut x = Tensor::new([3], vec![0.5, -1.0, 2.0]).unwrap();
            let before = x.clone();
            opt.step(vec![&mut x], &[Tensor::zeros(&[3])]).unwrap();
            assert_eq!(x, before);
        }
    }

    #[test]
    fn zero_learning_rate_freezes() {
        let mut opt = Optimizer::new(OptimizerConfig { lr: 0.0, ..OptimizerConfig::default() }).unwrap();
        let mut x = Tensor::new([2], vec![0.5, -1.0]).unwrap();
        let before = x.clone();
        opt.step(vec![&mut x], &[Tensor::ones(&[2])]).unwrap();
        assert_eq!(x, before);
    }

    #[test]
    fn bad_configs_and_mismatches_are_rejected() {
        assert!(Optimizer::new(OptimizerConfig { lr: -1.0, ..OptimizerConfig::default() }).is_err());
        assert!(Optimizer::new(OptimizerConfig { beta1: 1.0, ..OptimizerConfig::default() }).is_err());
        let mut opt = Optimizer::new(OptimizerConfig::default()).unwrap();
        let mut x = Tensor::zeros(&[2]);
        assert!(matches!(opt.step(vec![&mut x], &[Tensor::zeros(&[3])]), Err(Error::Contract(_))));
        assert_eq!("adam".parse::<OptimizerKind>().unwrap(), OptimizerKind::Adam);
    }
}
