//! Gradient evaluation and central-difference verification.

use crate::error::GradError;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Value and gradients of a scalar function of `inputs`.
pub fn grad<F, E>(f: F, inputs: &[Tensor]) -> Result<(f64, Vec<Tensor>), E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<GradError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(GradError::NotScalar(value.shape().to_vec()).into());
    }
    let value = value.item();
    let grads = tape.backward(out)?;
    Ok((value, vars.iter().map(|&v| grads.wrt(&tape, v)).collect()))
}

fn eval<F, E>(f: &F, inputs: &[Tensor]) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<GradError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Where the worst disagreement between analytic and numeric gradients occurred.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Max over all coordinates of `|analytic − central| / max(1, |central|)`.
pub fn grad_check<F, E>(f: F, inputs: &[Tensor], step: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<GradError>,
{
    grad_check_report(f, inputs, step).map(|r| r.max_rel_error)
}

pub fn grad_check_report<F, E>(f: F, inputs: &[Tensor], step: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<GradError>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(
            GradError::invalid("grad_check", format!("step must be positive, got {step}")).into(),
        );
    }
    let (_, analytic) = grad(&f, inputs)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        input: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (input, grad_in) in analytic.iter().enumerate() {
        for index in 0..probe[input].len() {
            let orig = probe[input].data()[index];
            probe[input].data_mut()[index] = orig + step;
            let plus = eval(&f, &probe)?;
            probe[input].data_mut()[index] = orig - step;
            let minus = eval(&f, &probe)?;
            probe[input].data_mut()[index] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(GradError::NonFinite { input, index }.into());
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad_in.data()[index];
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            if err > report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: err,
                    input,
                    index,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
