//! Adversarial objectives as differentiable scalar losses.
//!
//! Every loss here is minimized: the discriminator descends `loss_d` (ascent
//! on the value function) and the generator descends `loss_g`. Logistic
//! objectives reject probabilities outside `[0, 1]` and then clamp into
//! `[ε, 1 − ε]` before taking logs.

pub mod reference;

use crate::error::{shape_err, Error, Result};
use crate::models::ModelKind;
use crate::tensor::{Tensor, Var};

pub const DEFAULT_LOG_EPSILON: f64 = 1e-7;

/// Discriminator and generator losses of one batch.
#[derive(Clone, Copy, Debug)]
pub struct AdversarialLosses<'t> {
    pub discriminator: Var<'t>,
    pub generator: Var<'t>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanObjective {
    pub kind: ModelKind,
    /// Log guard ε.
    pub epsilon: f64,
    /// Minimize the literal minimax generator term instead of the
    /// non-saturating flipped-target form.
    pub saturating: bool,
}

impl GanObjective {
    pub fn new(kind: ModelKind) -> Self {
        Self { kind, epsilon: DEFAULT_LOG_EPSILON, saturating: false }
    }

    /// Losses from discriminator responses on real and generated images.
    /// `attributes` is required by the restoration objective only.
    pub fn losses<'t>(&self, d_real: Var<'t>, d_fake: Var<'t>, attributes: Option<Var<'t>>) -> Result<AdversarialLosses<'t>> {
        match self.kind {
            ModelKind::Gan | ModelKind::Dcgan => gan_loss(d_real, d_fake, self.epsilon, self.saturating),
            ModelKind::Cgan => cgan_loss(d_real, d_fake, self.epsilon, self.saturating),
            ModelKind::Wgan => wgan_loss(d_real, d_fake),
            ModelKind::Resgan => {
                let y = attributes.ok_or_else(|| Error::Contract("the restoration objective needs attributes".into()))?;
                resgan_loss(d_real, d_fake, y, self.epsilon, self.saturating)
            }
        }
    }

    /// Generator loss alone, from responses on generated images.
    pub fn generator_loss<'t>(&self, d_fake: Var<'t>, attributes: Option<Var<'t>>) -> Result<Var<'t>> {
        match self.kind {
            ModelKind::Gan | ModelKind::Dcgan | ModelKind::Cgan => gan_generator_loss(d_fake, self.epsilon, self.saturating),
            ModelKind::Wgan => wgan_generator_loss(d_fake),
            ModelKind::Resgan => {
                let y = attributes.ok_or_else(|| Error::Contract("the restoration objective needs attributes".into()))?;
                resgan_generator_loss(d_fake, y, self.epsilon, self.saturating)
            }
        }
    }
}

fn check_probabilities(t: &Tensor, what: &str) -> Result<()> {
    match t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::Domain(format!("{what} holds {v}, outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Rejects values outside `[0, 1]` (NaN included) and clamps into `[ε, 1 − ε]`.
pub fn guard<'t>(p: Var<'t>, epsilon: f64, what: &str) -> Result<Var<'t>> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::Config(format!("log guard ε = {epsilon} must lie in (0, 0.5)")));
    }
    check_probabilities(&p.value(), what)?;
    Ok(p.clamp(epsilon, 1.0 - epsilon))
}

fn single_column(v: Var<'_>, what: &str) -> Result<()> {
    let s = v.shape();
    if s.len() != 2 || s[1] != 1 {
        return shape_err(format!("{what} must be [N, 1], got {s:?}"));
    }
    Ok(())
}

/// Per-example integrand `log D(x) + log(1 − D(G(z)))` of the minimax value.
pub fn gan_value_terms<'t>(d_real: Var<'t>, d_fake: Var<'t>, epsilon: f64) -> Result<Var<'t>> {
    single_column(d_real, "d_real")?;
    single_column(d_fake, "d_fake")?;
    let real = guard(d_real, epsilon, "d_real")?;
    let fake = guard(d_fake, epsilon, "d_fake")?;
    real.log()?.add(fake.one_minus().log()?)
}

pub fn gan_loss<'t>(d_real: Var<'t>, d_fake: Var<'t>, epsilon: f64, saturating: bool) -> Result<AdversarialLosses<'t>> {
    single_column(d_real, "d_real")?;
    single_column(d_fake, "d_fake")?;
    let real = guard(d_real, epsilon, "d_real")?;
    let fake = guard(d_fake, epsilon, "d_fake")?;
    let discriminator = real.log()?.mean().add(fake.one_minus().log()?.mean())?.neg();
    Ok(AdversarialLosses { discriminator, generator: gan_generator_loss(d_fake, epsilon, saturating)? })
}

/// `−mean(log d_fake)`, or `mean(log(1 − d_fake))` when saturating.
pub fn gan_generator_loss(d_fake: Var<'_>, epsilon: f64, saturating: bool) -> Result<Var<'_>> {
    single_column(d_fake, "d_fake")?;
    let fake = guard(d_fake, epsilon, "d_fake")?;
    Ok(if saturating { fake.one_minus().log()?.mean() } else { fake.log()?.mean().neg() })
}

/// The conditional objective has the unconditional form; conditioning
/// happens upstream, where `Y` joins both networks' inputs.
pub fn cgan_loss<'t>(d_real: Var<'t>, d_fake: Var<'t>, epsilon: f64, saturating: bool) -> Result<AdversarialLosses<'t>> {
    gan_loss(d_real, d_fake, epsilon, saturating)
}

/// `loss_d = −(mean(real) − mean(fake))`, `loss_g = −mean(fake)`.
pub fn wgan_loss<'t>(d_real: Var<'t>, d_fake: Var<'t>) -> Result<AdversarialLosses<'t>> {
    single_column(d_real, "critic score on real images")?;
    single_column(d_fake, "critic score on generated images")?;
    let discriminator = d_real.mean().sub(d_fake.mean())?.neg();
    Ok(AdversarialLosses { discriminator, generator: wgan_generator_loss(d_fake)? })
}

pub fn wgan_generator_loss(d_fake: Var<'_>) -> Result<Var<'_>> {
    single_column(d_fake, "critic score on generated images")?;
    Ok(d_fake.mean().neg())
}

fn matching<'t>(d_real: Var<'t>, d_fake: Var<'t>, y: Var<'t>) -> Result<()> {
    let (r, f, a) = (d_real.shape(), d_fake.shape(), y.shape());
    if r.len() != 2 || r != f || r != a {
        return shape_err(format!("d_real {r:?}, d_fake {f:?} and Y {a:?} must share one [N, d] shape"));
    }
    check_probabilities(&y.value(), "Y")
}

/// Elementwise `Y·[log d_real + log(1 − d_fake)] + (1 − Y)·[log(1 − d_real) + log d_fake]`.
pub fn resgan_value_terms<'t>(d_real: Var<'t>, d_fake: Var<'t>, y: Var<'t>, epsilon: f64) -> Result<Var<'t>> {
    matching(d_real, d_fake, y)?;
    let real = guard(d_real, epsilon, "d_real")?;
    let fake = guard(d_fake, epsilon, "d_fake")?;
    let on_y = real.log()?.add(fake.one_minus().log()?)?;
    let off_y = real.one_minus().log()?.add(fake.log()?)?;
    y.mul(on_y)?.add(y.one_minus().mul(off_y)?)
}

/// Working scalar `J`: the value terms averaged over batch and attributes.
pub fn resgan_value<'t>(d_real: Var<'t>, d_fake: Var<'t>, y: Var<'t>, epsilon: f64) -> Result<Var<'t>> {
    Ok(resgan_value_terms(d_real, d_fake, y, epsilon)?.mean())
}

/// `loss_d = −J`. The non-saturating `loss_g` is the cross-entropy pulling
/// `D(G(X_r))` toward `Y`; the saturating one is `J`'s generated-image part.
pub fn resgan_loss<'t>(d_real: Var<'t>, d_fake: Var<'t>, y: Var<'t>, epsilon: f64, saturating: bool) -> Result<AdversarialLosses<'t>> {
    let discriminator = resgan_value(d_real, d_fake, y, epsilon)?.neg();
    Ok(AdversarialLosses { discriminator, generator: resgan_generator_loss(d_fake, y, epsilon, saturating)? })
}

pub fn resgan_generator_loss<'t>(d_fake: Var<'t>, y: Var<'t>, epsilon: f64, saturating: bool) -> Result<Var<'t>> {
    matching(d_fake, d_fake, y)?;
    let fake = guard(d_fake, epsilon, "d_fake")?;
    let (log_fake, log_not_fake) = (fake.log()?, fake.one_minus().log()?);
    Ok(if saturating {
        y.mul(log_not_fake)?.add(y.one_minus().mul(log_fake)?)?.mean()
    } else {
        y.mul(log_fake)?.add(y.one_minus().mul(log_not_fake)?)?.mean().neg()
    })
}

fn zip3(a: &Tensor, b: &Tensor, c: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() || a.shape() != c.shape() {
        return shape_err(format!("operands {:?}, {:?} and {:?} differ in shape", a.shape(), b.shape(), c.shape()));
    }
    let data = a.data().iter().zip(b.data()).zip(c.data()).map(|((&a, &b), &c)| f(a, b, c)).collect();
    Tensor::new(a.shape(), data)
}

/// The two terms of the closed-form discriminator gradient: the real-image
/// part `(Y − f_θ(X))·X` and the generated-image part `(1 − Y − f_θ(g_φ(Y)))·Y`,
/// the latter computed by [`closed_form_grad_phi`].
pub fn grad_theta_terms(x: &Tensor, y: &Tensor, f_theta_x: &Tensor, f_theta_gy: &Tensor) -> Result<(Tensor, Tensor)> {
    let real = zip3(x, y, f_theta_x, |x, y, fx| (y - fx) * x)?;
    Ok((real, closed_form_grad_phi(y, f_theta_gy)?))
}

/// Closed-form discriminator gradient `(Y − f_θ(X))·X + (1 − Y − f_θ(g_φ(Y)))·Y`
/// of the logistic-linear reference pair, per example and attribute.
pub fn closed_form_grad_theta(x: &Tensor, y: &Tensor, f_theta_x: &Tensor, f_theta_gy: &Tensor) -> Result<Tensor> {
    let (real, fake) = grad_theta_terms(x, y, f_theta_x, f_theta_gy)?;
    zip3(&real, &fake, &fake, |r, f, _| r + f)
}

/// Closed-form generator gradient `(1 − Y − f_θ(g_φ(Y)))·Y`.
pub fn closed_form_grad_phi(y: &Tensor, f_theta_gy: &Tensor) -> Result<Tensor> {
    zip3(y, f_theta_gy, y, |y, fg, _| (1.0 - y - fg) * y)
}
