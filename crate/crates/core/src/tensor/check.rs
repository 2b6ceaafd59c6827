use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function against central
/// differences and returns the largest relative error,
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, input: &Tensor, epsilon: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    grad_check_with(|vars| f(vars[0]), std::slice::from_ref(input), epsilon)
}

/// [`grad_check`] over several inputs at once; the maximum is taken over
/// every coordinate of every input.
pub fn grad_check_with<F>(f: F, inputs: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = values.iter().map(|t| tape.constant(t.clone())).collect();
        scalar(f(&vars)?)
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&vars)?;
    scalar(out)?;
    tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = var.grad().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + epsilon;
            let plus = eval(&probe)?;
            probe[k].data_mut()[i] = orig - epsilon;
            let minus = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn scalar(v: Var<'_>) -> Result<f64> {
    let value = v.value();
    if value.len() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            value.shape()
        )));
    }
    Ok(value.data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_sum_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let err = grad_check(|v| Ok(v.sum()), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn mean_of_sigmoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::randn(&[5, 3], 2.0, &mut rng);
        let err = grad_check(|v| Ok(v.sigmoid().mean()), &x, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn relu_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(&[20], 1.0, &mut rng).map(|v| if v.abs() < 1e-3 { v.signum() * 1e-2 } else { v });
        let err = grad_check(|v| Ok(v.relu().mul(v)?.sum()), &x, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn non_scalar_output_is_contract_error() {
        let x = Tensor::ones(&[3]);
        assert!(matches!(grad_check(|v| Ok(v.sigmoid()), &x, 1e-5), Err(Error::Contract(_))));
    }
}
