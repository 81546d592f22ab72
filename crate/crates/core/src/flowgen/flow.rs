//! Time sampling, the noised linear interpolant, boundary-anchored sources,
//! channel statistics, and the detached K-step rollout.

use serde::{Deserialize, Serialize};
use trajloom_grad::{Rng, Tape, Tensor, Var};

use super::ode::{sigmoid, TimeGrid};
use crate::error::{invalid, Error, Result};
use crate::lossbank::TokenWeights;
use crate::models::FlowCondition;

pub const T_MIN: f64 = 1e-5;
pub const T_MAX: f64 = 1.0 - 1e-5;

/// With probability 0.2 draw `U(0, 0.1)`, otherwise `sigmoid(N(0, 1))`; clamp to `[1e-5, 1 − 1e-5]`.
pub fn sample_time(rng: &mut Rng) -> f64 {
    let t = if rng.uniform() < 0.2 {
        rng.uniform_range(0.0, 0.1)
    } else {
        sigmoid(rng.normal())
    };
    t.clamp(T_MIN, T_MAX)
}

/// Everything one flow-matching step needs.
#[derive(Clone, Debug)]
pub struct FlowProblem {
    pub z0: Tensor,
    pub z1: Tensor,
    pub cond: FlowCondition,
    pub weights: TokenWeights,
    /// Tube noise `σ`.
    pub sigma: f64,
    /// Anchor noise `σ0` used to build `z0`.
    pub sigma0: f64,
}

impl FlowProblem {
    pub fn validate(&self) -> Result<()> {
        if self.z0.shape() != self.z1.shape() {
            return Err(invalid(
                "flow problem",
                format!("z0 {:?} vs z1 {:?}", self.z0.shape(), self.z1.shape()),
            ));
        }
        if !(self.sigma >= 0.0 && self.sigma0 >= 0.0) {
            return Err(invalid("flow problem", "noise levels must be non-negative"));
        }
        Ok(())
    }

    pub fn batch(&self) -> usize {
        self.z0.shape()[0]
    }
}

/// `z_t = (1−t)·z0 + t·z1 + σε` and `u = z1 − z0`, one `t` per batch item.
pub fn interpolate(problem: &FlowProblem, t: &[f64], rng: &mut Rng) -> Result<(Tensor, Tensor)> {
    problem.validate()?;
    let b = problem.batch();
    if t.len() != b {
        return Err(invalid(
            "interpolate",
            format!("{} times for batch {b}", t.len()),
        ));
    }
    if t.iter().any(|&ti| !(0.0..=1.0).contains(&ti)) {
        return Err(invalid("interpolate", "t must lie in [0, 1]"));
    }
    let per = problem.z0.len() / b.max(1);
    let (z0, z1) = (problem.z0.data(), problem.z1.data());
    let noise = if problem.sigma > 0.0 {
        Some(rng.draw_normal(problem.z0.shape()))
    } else {
        None
    };
    let mut zt = Vec::with_capacity(z0.len());
    for (i, (&a, &c)) in z0.iter().zip(z1).enumerate() {
        let ti = t[i / per];
        let mut v = (1.0 - ti) * a + ti * c;
        if let Some(e) = &noise {
            v += problem.sigma * e.data()[i];
        }
        zt.push(v);
    }
    let u = problem.z1.sub(&problem.z0)?;
    Ok((Tensor::new(problem.z0.shape().to_vec(), zt)?, u))
}

/// Which future slices start from the last history latent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorMode {
    #[default]
    FirstSlice,
    AllSlices,
}

/// Unit-Gaussian source `[B, K, N, C]` whose anchored slices are replaced by
/// `z(−1) + σ0·η`. `z_last` is one latent time slice `[B, 1, N, C]`.
pub fn boundary_init(
    z_last: &Tensor,
    future_steps: usize,
    sigma0: f64,
    rng: &mut Rng,
    mode: AnchorMode,
) -> Result<Tensor> {
    let s = z_last.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(invalid(
            "boundary_init",
            format!("expected one latent slice [B, 1, N, C], got {s:?}"),
        ));
    }
    if future_steps == 0 || !(sigma0 >= 0.0) {
        return Err(invalid("boundary_init", "need future steps and σ0 ≥ 0"));
    }
    let (b, slice) = (s[0], s[2] * s[3]);
    let mut z0 = rng.draw_normal(&[b, future_steps, s[2], s[3]]);
    let anchored = match mode {
        AnchorMode::FirstSlice => 1,
        AnchorMode::AllSlices => future_steps,
    };
    let eta = rng.draw_normal(&[b, anchored, s[2], s[3]]);
    let last = z_last.data();
    let out = z0.data_mut();
    for bi in 0..b {
        for k in 0..anchored {
            for e in 0..slice {
                out[(bi * future_steps + k) * slice + e] =
                    last[bi * slice + e] + sigma0 * eta.data()[(bi * anchored + k) * slice + e];
            }
        }
    }
    Ok(z0)
}

/// Per-channel mean and standard deviation of latents (channels last).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentStats {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(invalid(
                "latent stats",
                "mean and std must be non-empty and equally long",
            ));
        }
        if std.iter().any(|&s| !(s > 0.0 && s.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
            return Err(invalid("latent stats", "std must be positive and finite"));
        }
        Ok(LatentStats { mean, std })
    }

    /// Population statistics over every position of every tensor.
    pub fn fit(latents: &[&Tensor]) -> Result<Self> {
        let c = match latents.first() {
            Some(t) => *t.shape().last().unwrap_or(&0),
            None => return Err(invalid("latent stats", "empty corpus")),
        };
        if c == 0 || latents.iter().any(|t| t.shape().last() != Some(&c)) {
            return Err(invalid("latent stats", "channel counts differ"));
        }
        let mut sum = vec![0.0; c];
        let mut count = 0usize;
        for t in latents {
            for row in t.data().chunks(c) {
                for (s, &v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
                count += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; c];
        for t in latents {
            for row in t.data().chunks(c) {
                for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *v += (x - m).powi(2);
                }
            }
        }
        let std = var.iter().map(|v| (v / count as f64).sqrt()).collect();
        LatentStats::new(mean, std)
    }

    pub fn identity(channels: usize) -> Self {
        LatentStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    fn check(&self, z: &Tensor) -> Result<usize> {
        let c = self.mean.len();
        if z.shape().last() != Some(&c) {
            return Err(invalid(
                "latent stats",
                format!("{c} channels vs latent {:?}", z.shape()),
            ));
        }
        if self.std.contains(&0.0) {
            return Err(invalid("latent stats", "zero standard deviation"));
        }
        Ok(c)
    }

    pub fn normalize(&self, z: &Tensor) -> Result<Tensor> {
        let c = self.check(z)?;
        let mut out = z.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[i % c]) / self.std[i % c];
        }
        Ok(out)
    }

    pub fn denormalize(&self, z: &Tensor) -> Result<Tensor> {
        let c = self.check(z)?;
        let mut out = z.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.std[i % c] + self.mean[i % c];
        }
        Ok(out)
    }
}

/// Detached Euler rollout on `grid` recording visited states and velocities.
pub fn kstep_rollout<F>(
    mut v: F,
    z0: &Tensor,
    grid: &TimeGrid,
) -> Result<(Vec<Tensor>, Vec<Tensor>)>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    let mut states = vec![z0.clone()];
    let mut vels = Vec::with_capacity(grid.steps());
    for (i, w) in grid.times.windows(2).enumerate() {
        let vi = v(&states[i], w[0])?;
        let next = states[i].axpy(w[1] - w[0], &vi)?;
        if !next.is_finite() {
            return Err(Error::NonFinite {
                what: "rollout state",
                step: i,
            });
        }
        vels.push(vi);
        states.push(next);
    }
    Ok((states, vels))
}

/// Tape version of [`kstep_rollout`]: each state is
/// `z̃_{i+1} = z̃_i + Δt·stop_grad(v_i)`, so parameters receive gradient only
/// through the recorded velocities.
pub fn kstep_rollout_var<F>(
    tape: &mut Tape,
    z0: &Tensor,
    grid: &TimeGrid,
    mut v: F,
) -> Result<(Vec<Var>, Vec<Var>)>
where
    F: FnMut(&mut Tape, Var, f64) -> Result<Var>,
{
    let mut states = vec![tape.constant(z0.clone())];
    let mut vels = Vec::with_capacity(grid.steps());
    for (i, w) in grid.times.windows(2).enumerate() {
        let vi = v(tape, states[i], w[0])?;
        let detached = tape.stop_grad(vi);
        let step = tape.scale(detached, w[1] - w[0]);
        let next = tape.add(states[i], step)?;
        if !tape.value(next).is_finite() {
            return Err(Error::NonFinite {
                what: "rollout state",
                step: i,
            });
        }
        vels.push(vi);
        states.push(next);
    }
    Ok((states, vels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_channel_stats_example() {
        let s = LatentStats::new(vec![0.0], vec![2.0]).unwrap();
        let z = Tensor::new(vec![1, 1], vec![4.0]).unwrap();
        assert_eq!(s.normalize(&z).unwrap().item(), 2.0);
    }

    #[test]
    fn zero_std_rejected() {
        assert!(LatentStats::new(vec![0.0], vec![0.0]).is_err());
        let flat = Tensor::full(&[3, 2], 1.0);
        assert!(LatentStats::fit(&[&flat]).is_err());
    }

    #[test]
    fn boundary_requires_single_slice() {
        let mut rng = Rng::new(0);
        let z = Tensor::zeros(&[1, 2, 4, 3]);
        assert!(boundary_init(&z, 2, 0.1, &mut rng, AnchorMode::FirstSlice).is_err());
    }
}
