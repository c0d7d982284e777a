use super::matrix::DenseMatrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Relative error used by the finite-difference checks.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Records `loss_fn` on a fresh tape with `params` registered in order and
/// returns the loss value and the parameter gradients.
pub fn value_and_grad<F>(params: &[DenseMatrix], loss_fn: &F) -> Result<(f64, Vec<DenseMatrix>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.param(p))
        .collect::<Result<Vec<_>>>()?;
    let loss = loss_fn(&mut tape, &vars)?;
    let value = tape.scalar(loss);
    let grads = tape.backward(loss)?.param_grads();
    Ok((value, grads))
}

/// Evaluates the loss only.
pub fn loss_value<F>(params: &[DenseMatrix], loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.param(p))
        .collect::<Result<Vec<_>>>()?;
    let loss = loss_fn(&mut tape, &vars)?;
    Ok(tape.scalar(loss))
}

/// Finite-difference formula for one coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error O(h²).
    #[default]
    Central,
    /// `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`, error O(h⁴).
    FivePoint,
}

/// Max relative error between `analytic` and central differences of `eval`
/// over every coordinate of `params`. Zero coordinates give 0.
pub fn compare_with_central_differences<E>(
    params: &[DenseMatrix],
    analytic: &[DenseMatrix],
    step: f64,
    eval: E,
) -> Result<f64>
where
    E: Fn(&[DenseMatrix]) -> Result<f64>,
{
    compare_with_differences(params, analytic, step, Stencil::Central, eval)
}

/// Like [`compare_with_central_differences`] with a choice of stencil.
pub fn compare_with_differences<E>(
    params: &[DenseMatrix],
    analytic: &[DenseMatrix],
    step: f64,
    stencil: Stencil,
    eval: E,
) -> Result<f64>
where
    E: Fn(&[DenseMatrix]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {step}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{} analytic gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut work = params.to_vec();
    let mut worst = 0.0_f64;
    for p in 0..params.len() {
        for c in 0..params[p].len() {
            let orig = params[p].as_slice()[c];
            let mut at = |offset: f64| -> Result<f64> {
                work[p].as_mut_slice()[c] = orig + offset;
                let v = eval(&work);
                work[p].as_mut_slice()[c] = orig;
                match v {
                    Ok(v) if v.is_finite() => Ok(v),
                    Err(e) => Err(Error::Evaluation(format!(
                        "parameter {p}[{c}] perturbed by {offset:+e}: {e}"
                    ))),
                    _ => Err(Error::Evaluation(format!(
                        "non-finite loss at parameter {p}[{c}] perturbed by {offset:+e}"
                    ))),
                }
            };
            let numeric = match stencil {
                Stencil::Central => (at(step)? - at(-step)?) / (2.0 * step),
                Stencil::FivePoint => {
                    let near = at(step)? - at(-step)?;
                    let far = at(2.0 * step)? - at(-2.0 * step)?;
                    (8.0 * near - far) / (12.0 * step)
                }
            };
            worst = worst.max(relative_error(analytic[p].as_slice()[c], numeric));
        }
    }
    Ok(worst)
}

/// Checks the tape's gradients of `loss_fn` against central differences with
/// the given step. Returns the maximum relative error.
pub fn finite_diff_check<F>(params: &[DenseMatrix], step: f64, loss_fn: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {step}")));
    }
    let (_, analytic) = value_and_grad(params, &loss_fn)?;
    compare_with_central_differences(params, &analytic, step, |p| loss_value(p, &loss_fn))
}
