//! AdamW with decoupled weight decay and optional global-norm clipping.

use crate::error::GradError;
use crate::params::ParamSet;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    /// Rescale gradients so their global norm does not exceed this value.
    pub clip_norm: Option<f64>,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimState {
    pub hp: AdamW,
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

impl OptimState {
    pub fn new(params: &ParamSet, hp: AdamW) -> Self {
        OptimState {
            hp,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One AdamW update. Validates every gradient before touching any parameter.
pub fn optim_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut OptimState,
) -> Result<(), GradError> {
    for (name, p) in params.iter() {
        let g = grads.get(name)?;
        if g.shape() != p.shape() {
            return Err(GradError::shape("optim_step", p.shape(), g.shape()));
        }
        if state.m.get(name)?.shape() != p.shape() || state.v.get(name)?.shape() != p.shape() {
            return Err(GradError::invalid(
                "optim_step",
                format!("moment shape mismatch for `{name}`"),
            ));
        }
        if !g.is_finite() {
            return Err(GradError::NonFiniteGradient(name.clone()));
        }
    }
    let hp = state.hp.clone();
    let scale = match hp.clip_norm {
        Some(max) => {
            let norm = grads.global_norm();
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?;
        let m = state.m.get_mut(name)?;
        for (mi, gi) in m.data_mut().iter_mut().zip(g.data()) {
            *mi = hp.beta1 * *mi + (1.0 - hp.beta1) * gi * scale;
        }
        let v = state.v.get_mut(name)?;
        for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
            let gs = gi * scale;
            *vi = hp.beta2 * *vi + (1.0 - hp.beta2) * gs * gs;
        }
        let m = state.m.get(name)?;
        let v = state.v.get(name)?;
        for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            *pi *= 1.0 - hp.lr * hp.weight_decay;
            *pi -= hp.lr * (mi / bc1) / ((vi / bc2).sqrt() + hp.eps);
        }
    }
    Ok(())
}
