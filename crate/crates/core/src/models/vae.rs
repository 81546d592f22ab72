//! Trajectory autoencoder over offset segments `[B, T, H, W, 2]` with latents `[B, T_lat, N, C]`.

use std::rc::Rc;

use serde::{Deserialize, Serialize};
use trajloom_grad::{BoundParams, ParamSet, Rng, Tape, Tensor, Var};

use super::layers::{add_broadcast, block, dense, init_block, init_dense};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    pub height: usize,
    pub width: usize,
    /// Segment length `T_seg`.
    pub frames: usize,
    pub patch: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub latent_channels: usize,
    /// Temporal compression ratio `r`.
    pub ratio: usize,
    /// Initial bias of the log-variance head.
    pub logvar_init: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            height: 32,
            width: 32,
            frames: 8,
            patch: 8,
            hidden: 64,
            blocks: 2,
            latent_channels: 8,
            ratio: 4,
            logvar_init: -4.0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        let zero = [
            self.height,
            self.width,
            self.frames,
            self.patch,
            self.hidden,
            self.latent_channels,
            self.ratio,
        ]
        .contains(&0);
        if zero {
            return Err(invalid("vae config", "extents must be positive"));
        }
        if !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(invalid(
                "vae config",
                format!(
                    "patch {} does not divide {}x{}",
                    self.patch, self.height, self.width
                ),
            ));
        }
        if !self.logvar_init.is_finite() {
            return Err(invalid("vae config", "logvar_init must be finite"));
        }
        Ok(())
    }

    /// `T_lat = ⌈T_seg / r⌉`.
    pub fn latent_frames(&self) -> usize {
        self.frames.div_ceil(self.ratio)
    }

    /// Frames after replicate padding to a multiple of `r`.
    pub fn padded_frames(&self) -> usize {
        self.latent_frames() * self.ratio
    }

    pub fn tokens(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn token_features(&self) -> usize {
        self.patch * self.patch * 2
    }

    pub fn segment_shape(&self, batch: usize) -> Vec<usize> {
        vec![batch, self.frames, self.height, self.width, 2]
    }

    pub fn latent_shape(&self, batch: usize) -> Vec<usize> {
        vec![
            batch,
            self.latent_frames(),
            self.tokens(),
            self.latent_channels,
        ]
    }
}

/// Autoencoder parameters with their configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Vae {
    pub cfg: VaeConfig,
    pub params: ParamSet,
}

/// Flat index mapping a `[H, W, 2]` frame to `[N, P·P·2]` patch tokens.
fn patch_index(cfg: &VaeConfig) -> Vec<usize> {
    let (h, w, p) = (cfg.height, cfg.width, cfg.patch);
    let pw = w / p;
    let mut idx = Vec::with_capacity(h * w * 2);
    for n in 0..cfg.tokens() {
        let (pi, pj) = (n / pw, n % pw);
        for di in 0..p {
            for dj in 0..p {
                for c in 0..2 {
                    idx.push(((pi * p + di) * w + pj * p + dj) * 2 + c);
                }
            }
        }
    }
    idx
}

fn batched(frame_index: &[usize], frames: usize) -> Rc<[usize]> {
    let per = frame_index.len();
    (0..frames)
        .flat_map(|f| frame_index.iter().map(move |&i| f * per + i))
        .collect()
}

impl Vae {
    pub fn init(cfg: VaeConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (d, n, f, c, r) = (
            cfg.hidden,
            cfg.tokens(),
            cfg.token_features(),
            cfg.latent_channels,
            cfg.ratio,
        );
        let (tp, tl, t) = (cfg.padded_frames(), cfg.latent_frames(), cfg.frames);
        let mut ps = ParamSet::new();
        init_dense(&mut ps, "enc.in", f, d, 1.0, rng);
        ps.insert("enc.pos_s", rng.draw_normal(&[1, 1, n, d]).scale(0.02));
        ps.insert("enc.pos_t", rng.draw_normal(&[1, tp, 1, d]).scale(0.02));
        for i in 0..cfg.blocks {
            init_block(&mut ps, &format!("enc.b{i}"), tp, n, d, rng);
        }
        init_dense(&mut ps, "enc.down", r * d, d, 1.0, rng);
        init_block(&mut ps, "enc.lat", tl, n, d, rng);
        init_dense(&mut ps, "enc.mu", d, c, 1.0, rng);
        init_dense(&mut ps, "enc.logvar", d, c, 0.1, rng);
        ps.insert("enc.logvar.b", Tensor::full(&[c], cfg.logvar_init));

        init_dense(&mut ps, "dec.in", c, d, 1.0, rng);
        init_block(&mut ps, "dec.lat", tl, n, d, rng);
        init_dense(&mut ps, "dec.up", d, r * d, 1.0, rng);
        ps.insert("dec.pos_s", rng.draw_normal(&[1, 1, n, d]).scale(0.02));
        ps.insert("dec.pos_t", rng.draw_normal(&[1, t, 1, d]).scale(0.02));
        for i in 0..cfg.blocks {
            init_block(&mut ps, &format!("dec.b{i}"), t, n, d, rng);
        }
        init_dense(&mut ps, "dec.out", d, f, 0.5, rng);
        Ok(Vae { cfg, params: ps })
    }

    fn check_params(&self) -> Result<()> {
        for name in ["enc.in.w", "enc.mu.w", "dec.out.w"] {
            self.params.get(name)?;
        }
        Ok(())
    }

    /// Posterior mean and log-variance of a `[B, T, H, W, 2]` segment batch.
    pub fn encode_var(&self, tape: &mut Tape, bp: &BoundParams, x: Var) -> Result<(Var, Var)> {
        let cfg = &self.cfg;
        let shape = tape.shape(x).to_vec();
        if shape.len() != 5 || shape[1..] != cfg.segment_shape(1)[1..] {
            return Err(invalid(
                "vae_encode",
                format!(
                    "expected [B, {}, {}, {}, 2], got {shape:?}",
                    cfg.frames, cfg.height, cfg.width
                ),
            ));
        }
        let b = shape[0];
        let (t, tp, tl, n, d, r) = (
            cfg.frames,
            cfg.padded_frames(),
            cfg.latent_frames(),
            cfg.tokens(),
            cfg.hidden,
            cfg.ratio,
        );
        let x = if tp > t {
            let idx: Vec<usize> = (0..tp).map(|i| i.min(t - 1)).collect();
            tape.take(x, 1, &idx)?
        } else {
            x
        };
        let tokens = tape.gather(
            x,
            batched(&patch_index(cfg), b * tp),
            &[b, tp, n, cfg.token_features()],
        )?;
        let mut hdn = dense(tape, bp, "enc.in", tokens)?;
        hdn = add_broadcast(tape, hdn, bp.get("enc.pos_s")?)?;
        hdn = add_broadcast(tape, hdn, bp.get("enc.pos_t")?)?;
        for i in 0..cfg.blocks {
            hdn = block(tape, bp, &format!("enc.b{i}"), hdn)?;
        }
        let g = tape.reshape(hdn, &[b, tl, r, n, d])?;
        let g = tape.permute(g, &[0, 1, 3, 2, 4])?;
        let g = tape.reshape(g, &[b, tl, n, r * d])?;
        let g = dense(tape, bp, "enc.down", g)?;
        let g = tape.gelu(g);
        let g = block(tape, bp, "enc.lat", g)?;
        let mu = dense(tape, bp, "enc.mu", g)?;
        let logvar = dense(tape, bp, "enc.logvar", g)?;
        Ok((mu, logvar))
    }

    /// Reconstruct `[B, T, H, W, 2]` offsets from `[B, T_lat, N, C]` latents.
    pub fn decode_var(&self, tape: &mut Tape, bp: &BoundParams, z: Var) -> Result<Var> {
        let cfg = &self.cfg;
        let shape = tape.shape(z).to_vec();
        if shape.len() != 4 || shape[1..] != cfg.latent_shape(1)[1..] {
            return Err(invalid(
                "vae_decode",
                format!(
                    "expected {:?} with any batch, got {shape:?}",
                    cfg.latent_shape(1)
                ),
            ));
        }
        let b = shape[0];
        let (t, tl, n, d, r) = (
            cfg.frames,
            cfg.latent_frames(),
            cfg.tokens(),
            cfg.hidden,
            cfg.ratio,
        );
        let h = dense(tape, bp, "dec.in", z)?;
        let h = block(tape, bp, "dec.lat", h)?;
        let h = dense(tape, bp, "dec.up", h)?;
        let h = tape.gelu(h);
        let h = tape.reshape(h, &[b, tl, n, r, d])?;
        let h = tape.permute(h, &[0, 1, 3, 2, 4])?;
        let h = tape.reshape(h, &[b, tl * r, n, d])?;
        let mut h = if tl * r > t {
            tape.slice(h, 1, 0, t)?
        } else {
            h
        };
        h = add_broadcast(tape, h, bp.get("dec.pos_s")?)?;
        h = add_broadcast(tape, h, bp.get("dec.pos_t")?)?;
        for i in 0..cfg.blocks {
            h = block(tape, bp, &format!("dec.b{i}"), h)?;
        }
        let out = dense(tape, bp, "dec.out", h)?;
        let fwd = patch_index(cfg);
        let mut inv = vec![0usize; fwd.len()];
        for (pos, &src) in fwd.iter().enumerate() {
            inv[src] = pos;
        }
        Ok(tape.gather(out, batched(&inv, b * t), &cfg.segment_shape(b))?)
    }

    /// Posterior mean and log-variance, evaluated without gradients.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_params()?;
        let mut tape = Tape::new();
        let bp = self.params.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let (mu, lv) = self.encode_var(&mut tape, &bp, xv)?;
        Ok((tape.value(mu).clone(), tape.value(lv).clone()))
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.check_params()?;
        let mut tape = Tape::new();
        let bp = self.params.bind_frozen(&mut tape);
        let zv = tape.constant(z.clone());
        let out = self.decode_var(&mut tape, &bp, zv)?;
        Ok(tape.value(out).clone())
    }
}

/// `z = μ + exp(½·logvar) ⊙ ε` with `ε` drawn from `rng`.
pub fn reparameterize(mu: &Tensor, logvar: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    if mu.shape() != logvar.shape() {
        return Err(invalid(
            "reparameterize",
            format!("mu {:?} vs logvar {:?}", mu.shape(), logvar.shape()),
        ));
    }
    let eps = rng.draw_normal(mu.shape());
    let data = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(eps.data())
        .map(|((&m, &l), &e)| m + (0.5 * l).exp() * e)
        .collect();
    Ok(Tensor::new(mu.shape().to_vec(), data)?)
}

/// Graph form of [`reparameterize`] with `ε` supplied as a constant.
pub fn reparameterize_var(tape: &mut Tape, mu: Var, logvar: Var, eps: &Tensor) -> Result<Var> {
    let half = tape.scale(logvar, 0.5);
    let std = tape.exp(half);
    let e = tape.constant(eps.clone());
    let noise = tape.mul(std, e)?;
    Ok(tape.add(mu, noise)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_index_is_a_permutation() {
        let cfg = VaeConfig::default();
        let mut idx = patch_index(&cfg);
        idx.sort_unstable();
        assert!(idx.iter().enumerate().all(|(i, &v)| i == v));
    }

    #[test]
    fn latent_frames_round_up() {
        let cfg = VaeConfig {
            frames: 9,
            ..VaeConfig::default()
        };
        assert_eq!(cfg.latent_frames(), 3);
        assert_eq!(cfg.padded_frames(), 12);
    }

    #[test]
    fn patch_must_divide_frame() {
        let cfg = VaeConfig {
            patch: 5,
            ..VaeConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
