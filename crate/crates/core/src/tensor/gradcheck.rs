//! Central finite-difference checks of tape gradients.

use crate::error::{KtError, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Floor added to the finite-difference magnitude in the relative error.
pub const RELATIVE_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + RELATIVE_FLOOR)
}

/// Evaluates `f` on fresh tapes and compares its analytic gradient at `point`
/// with central differences of step `h`. Returns the largest relative error.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let errors = grad_check_groups(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        h,
    )?;
    Ok(errors[0])
}

/// Multi-input variant: one maximum relative error per input group.
pub fn grad_check_groups<F>(f: F, points: &[Tensor], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(KtError::Contract(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    check_loss(&tape, loss)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v)).collect();

    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        check_loss(&tape, loss)?;
        Ok(tape.value(loss).item())
    };

    let mut work: Vec<Tensor> = points.to_vec();
    let mut worst = vec![0.0f64; points.len()];
    for g in 0..points.len() {
        for k in 0..points[g].numel() {
            let orig = points[g].data()[k];
            work[g].data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work[g].data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work[g].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic[g].data()[k], numeric);
            worst[g] = worst[g].max(err);
        }
    }
    Ok(worst)
}

fn check_loss(tape: &Tape, loss: Var) -> Result<()> {
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(KtError::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    if !v.item().is_finite() {
        return Err(KtError::Numeric("grad_check objective".into()));
    }
    Ok(())
}
