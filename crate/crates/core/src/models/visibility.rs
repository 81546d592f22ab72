//! Per-token visibility logits from future latents via temporal convolutions.

use serde::{Deserialize, Serialize};
use trajloom_grad::{BoundParams, ParamSet, Rng, Tape, Tensor, Var, ZERO_INDEX};

use super::layers::{dense, init_dense};
use crate::error::{invalid, Result};
use crate::lossbank::{pool_tokens, PoolMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisConfig {
    pub latent_channels: usize,
    pub hidden: usize,
    /// Kernel-3 temporal convolution layers.
    pub layers: usize,
}

impl Default for VisConfig {
    fn default() -> Self {
        VisConfig {
            latent_channels: 8,
            hidden: 32,
            layers: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityHead {
    pub cfg: VisConfig,
    pub params: ParamSet,
}

/// Token targets: 1 where any covered pixel-frame is visible.
pub fn pool_visibility(mask: &Tensor, patch: usize, ratio: usize) -> Result<Tensor> {
    pool_tokens(mask, patch, ratio, PoolMode::Max)
}

impl VisibilityHead {
    pub fn init(cfg: VisConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.latent_channels == 0 || cfg.hidden == 0 {
            return Err(invalid("visibility config", "extents must be positive"));
        }
        let mut ps = ParamSet::new();
        init_dense(&mut ps, "vis.in", cfg.latent_channels, cfg.hidden, 1.0, rng);
        for i in 0..cfg.layers {
            init_dense(
                &mut ps,
                &format!("vis.conv{i}"),
                3 * cfg.hidden,
                cfg.hidden,
                1.0,
                rng,
            );
        }
        init_dense(&mut ps, "vis.out", cfg.hidden, 1, 1.0, rng);
        Ok(VisibilityHead { cfg, params: ps })
    }

    /// Logits `[B, K, N]` from latents `[B, K, N, C]`.
    pub fn logits_var(&self, tape: &mut Tape, bp: &BoundParams, z: Var) -> Result<Var> {
        let shape = tape.shape(z).to_vec();
        if shape.len() != 4 || shape[3] != self.cfg.latent_channels {
            return Err(invalid(
                "visibility",
                format!(
                    "expected [B, K, N, {}], got {shape:?}",
                    self.cfg.latent_channels
                ),
            ));
        }
        let (b, k, n) = (shape[0], shape[1], shape[2]);
        let x = tape.permute(z, &[0, 2, 1, 3])?;
        let mut h = dense(tape, bp, "vis.in", x)?;
        h = tape.gelu(h);
        let before: Vec<usize> = (0..k)
            .map(|i| if i == 0 { ZERO_INDEX } else { i - 1 })
            .collect();
        let after: Vec<usize> = (0..k)
            .map(|i| if i + 1 < k { i + 1 } else { ZERO_INDEX })
            .collect();
        for i in 0..self.cfg.layers {
            let p = tape.take(h, 2, &before)?;
            let q = tape.take(h, 2, &after)?;
            let cat = tape.concat(&[p, h, q], 3)?;
            let c = dense(tape, bp, &format!("vis.conv{i}"), cat)?;
            let c = tape.gelu(c);
            h = tape.add(h, c)?;
        }
        let out = dense(tape, bp, "vis.out", h)?;
        let out = tape.reshape(out, &[b, n, k])?;
        Ok(tape.permute(out, &[0, 2, 1])?)
    }

    pub fn logits(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bp = self.params.bind_frozen(&mut tape);
        let zv = tape.constant(z.clone());
        let l = self.logits_var(&mut tape, &bp, zv)?;
        Ok(tape.value(l).clone())
    }

    /// Logits and the mask `σ(ℓ) ≥ threshold`, compared in logit space so a
    /// threshold of 1 marks every token invisible.
    pub fn predict(&self, z: &Tensor, threshold: f64) -> Result<(Tensor, Vec<bool>)> {
        let logits = self.logits(z)?;
        let mask = threshold_logits(&logits, threshold);
        Ok((logits, mask))
    }
}

pub fn threshold_logits(logits: &Tensor, threshold: f64) -> Vec<bool> {
    let cut = if threshold <= 0.0 {
        f64::NEG_INFINITY
    } else if threshold >= 1.0 {
        f64::INFINITY
    } else {
        (threshold / (1.0 - threshold)).ln()
    };
    logits.data().iter().map(|&l| l >= cut).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_extremes() {
        let l = Tensor::from_vec(vec![-50.0, 0.0, 50.0]);
        assert_eq!(threshold_logits(&l, 1.0), vec![false; 3]);
        assert_eq!(threshold_logits(&l, 0.0), vec![true; 3]);
        assert_eq!(threshold_logits(&l, 0.5), vec![false, true, true]);
    }
}
