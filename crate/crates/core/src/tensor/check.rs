//! Central finite-difference verification of tape gradients.

use super::{Result, Tape, Tensor, TensorError, Var};

/// Which derivative [`finite_diff_check`] compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffOrder {
    /// Gradient of `f` itself.
    First,
    /// Gradient of the penalty `Σ_p ||∂f/∂p||²`, which needs a double backward.
    Second,
}

/// `|a − b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / scale
}

/// Largest relative error between autodiff and central differences
/// `(f(p+h) − f(p−h)) / 2h` over every parameter entry.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], step: f64, order: DiffOrder) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(step > 0.0) {
        return Err(TensorError::BadStep(step));
    }
    let objective = |values: &[Tensor], tape: &Tape| -> Result<f64> {
        let vars: Vec<Var<'_>> = values.iter().map(|p| tape.param(p.clone())).collect();
        let out = match order {
            DiffOrder::First => f(tape, &vars)?,
            DiffOrder::Second => grad_norm_penalty(&f, tape, &vars)?,
        };
        let v = out.item();
        if !v.is_finite() {
            return Err(TensorError::NonFiniteEval);
        }
        Ok(v)
    };

    let analytic = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p.clone())).collect();
        let out = match order {
            DiffOrder::First => f(&tape, &vars)?,
            DiffOrder::Second => grad_norm_penalty(&f, &tape, &vars)?,
        };
        if !out.item().is_finite() {
            return Err(TensorError::NonFiniteEval);
        }
        tape.grad(out, &vars, false)?.into_values()
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    let tape = Tape::new();
    for (pi, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + step;
            tape.reset();
            let up = objective(&work, &tape)?;
            work[pi].data_mut()[k] = orig - step;
            tape.reset();
            let down = objective(&work, &tape)?;
            work[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(grad.data()[k], numeric));
        }
    }
    Ok(worst)
}

fn grad_norm_penalty<'t, F>(f: &F, tape: &'t Tape, vars: &[Var<'t>]) -> Result<Var<'t>>
where
    F: for<'s> Fn(&'s Tape, &[Var<'s>]) -> Result<Var<'s>>,
{
    let out = f(tape, vars)?;
    let grads = tape.grad(out, vars, true)?;
    let mut total = tape.scalar(0.0);
    for g in grads.vars().expect("create_graph returns vars") {
        total = total.add(g.sq_norm()?)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let p = Tensor::row(vec![0.5, -1.25, 2.0]).unwrap();
        let err = finite_diff_check(
            |_, v| v[0].square()?.scale(1.5)?.sum()?.shift(0.25),
            &[p],
            1e-4,
            DiffOrder::First,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let p = Tensor::row(vec![1.0, 2.0]).unwrap();
        for order in [DiffOrder::First, DiffOrder::Second] {
            let err = finite_diff_check(
                |tape, v| v[0].scale(0.0)?.sum()?.add(tape.scalar(3.0)),
                std::slice::from_ref(&p),
                1e-5,
                order,
            )
            .unwrap();
            assert_eq!(err, 0.0);
        }
    }

    #[test]
    fn rejects_non_positive_step() {
        let p = Tensor::scalar(1.0);
        let r = finite_diff_check(|_, v| v[0].square(), &[p], 0.0, DiffOrder::First);
        assert_eq!(r.unwrap_err(), TensorError::BadStep(0.0));
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let p = Tensor::scalar(1.0);
        // the -h evaluation leaves the domain of log
        let r = finite_diff_check(
            |_, v| v[0].shift(-0.9995)?.ln(),
            &[p],
            1e-3,
            DiffOrder::First,
        );
        assert!(r.is_err());
    }
}
