//! Logistic-linear reference pair on which the closed-form gradients are exact.
//!
//! Per attribute `k` the discriminator is `f_θ(v) = sigmoid(θ_k·v)`. The
//! generator enters only through the discriminator's linear response,
//! `θ_k·g_φ(Y)_k = (θ_k + φ_k)·Y_k`, so differentiating `J` gives
//! `∂J/∂θ = (Y − f_θ(X))·X + (1 − Y − f_θ(g_φ(Y)))·Y` and
//! `∂J/∂φ = (1 − Y − f_θ(g_φ(Y)))·Y` with no remainder.
//! Inputs are `[N, d]`; `θ` and `φ` are `[d]`. Sums run over the batch.

use crate::error::Result;
use crate::tensor::{Tensor, Var};

fn logits<'t>(theta: Var<'t>, phi: Var<'t>, x: Var<'t>, y: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    Ok((x.mul(theta)?, y.mul(theta.add(phi)?)?))
}

/// `J = Σ Y·[log f(X) + log(1 − f(G))] + (1 − Y)·[log(1 − f(X)) + log f(G)]`.
pub fn value<'t>(theta: Var<'t>, phi: Var<'t>, x: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
    let (real, fake) = logits(theta, phi, x, y)?;
    let (fx, fg) = (real.sigmoid(), fake.sigmoid());
    let on_y = fx.log()?.add(fg.one_minus().log()?)?;
    let off_y = fx.one_minus().log()?.add(fg.log()?)?;
    Ok(y.mul(on_y)?.add(y.one_minus().mul(off_y)?)?.sum())
}

/// Discriminator loss `−J`.
pub fn discriminator_loss<'t>(theta: Var<'t>, phi: Var<'t>, x: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
    Ok(value(theta, phi, x, y)?.neg())
}

/// Generator loss in the saturating (`J`'s generated part) or
/// non-saturating (cross-entropy toward `Y`) form.
pub fn generator_loss<'t>(theta: Var<'t>, phi: Var<'t>, y: Var<'t>, saturating: bool) -> Result<Var<'t>> {
    let fg = y.mul(theta.add(phi)?)?.sigmoid();
    let (log_fg, log_not_fg) = (fg.log()?, fg.one_minus().log()?);
    Ok(if saturating {
        y.mul(log_not_fg)?.add(y.one_minus().mul(log_fg)?)?.sum()
    } else {
        y.mul(log_fg)?.add(y.one_minus().mul(log_not_fg)?)?.sum().neg()
    })
}

/// `(f_θ(X), f_θ(g_φ(Y)))`, both `[N, d]`.
pub fn scores(theta: &Tensor, phi: &Tensor, x: &Tensor, y: &Tensor) -> Result<(Tensor, Tensor)> {
    let tape = crate::tensor::Tape::new();
    let c = |t: &Tensor| tape.constant(t.clone());
    let (real, fake) = logits(c(theta), c(phi), c(x), c(y))?;
    Ok((real.sigmoid().value().as_ref().clone(), fake.sigmoid().value().as_ref().clone()))
}
