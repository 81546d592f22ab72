//! Conditional velocity field over future latents `[B, K, N, C]`.

use serde::{Deserialize, Serialize};
use trajloom_grad::{BoundParams, ParamSet, Rng, Tape, Tensor, Var};

use super::layers::{add_broadcast, block, dense, init_block, init_dense};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowNetConfig {
    pub latent_channels: usize,
    pub tokens: usize,
    /// Future latent steps `K_f`.
    pub future_steps: usize,
    /// History latent steps available as condition.
    pub history_steps: usize,
    pub hidden: usize,
    pub blocks: usize,
    /// Sinusoidal time features (an even count).
    pub time_features: usize,
    /// Token-aligned history fusion on or off.
    pub fusion: bool,
    /// Initial fusion gain `α`.
    pub fusion_alpha: f64,
}

impl Default for FlowNetConfig {
    fn default() -> Self {
        FlowNetConfig {
            latent_channels: 8,
            tokens: 16,
            future_steps: 2,
            history_steps: 2,
            hidden: 64,
            blocks: 2,
            time_features: 16,
            fusion: true,
            fusion_alpha: 0.1,
        }
    }
}

impl FlowNetConfig {
    pub fn validate(&self) -> Result<()> {
        if [
            self.latent_channels,
            self.tokens,
            self.future_steps,
            self.history_steps,
            self.hidden,
        ]
        .contains(&0)
        {
            return Err(invalid("flow config", "extents must be positive"));
        }
        if self.time_features == 0 || !self.time_features.is_multiple_of(2) {
            return Err(invalid(
                "flow config",
                "time_features must be a positive even number",
            ));
        }
        if self.fusion && self.history_steps < 2 {
            return Err(invalid(
                "flow config",
                "history fusion needs at least two history steps",
            ));
        }
        Ok(())
    }

    pub fn latent_shape(&self, batch: usize) -> Vec<usize> {
        vec![batch, self.future_steps, self.tokens, self.latent_channels]
    }
}

/// History latents and pooled history visibility fed to the velocity field.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowCondition {
    /// `[B, K_p, N, C]`.
    pub z_hist: Tensor,
    /// `[B, K_p, N]`, mean-pooled history visibility.
    pub hist_vis: Tensor,
}

impl FlowCondition {
    pub fn batch(&self) -> usize {
        self.z_hist.shape()[0]
    }

    /// Items `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<FlowCondition> {
        Ok(FlowCondition {
            z_hist: slice_batch(&self.z_hist, start, len)?,
            hist_vis: slice_batch(&self.hist_vis, start, len)?,
        })
    }
}

/// Items `[start, start + len)` along the leading axis.
pub fn slice_batch(t: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let shape = t.shape();
    if shape.is_empty() || start + len > shape[0] {
        return Err(invalid(
            "slice_batch",
            format!("items {start}..{} of {shape:?}", start + len),
        ));
    }
    let per = t.len() / shape[0].max(1);
    let mut out = shape.to_vec();
    out[0] = len;
    Ok(Tensor::new(
        out,
        t.data()[start * per..(start + len) * per].to_vec(),
    )?)
}

/// Fusion gain, per-step gate logits and the fixed ramp.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub alpha: f64,
    pub gate_logits: Vec<f64>,
}

impl FusionParams {
    /// `g_k = sigmoid(logit_k) ∈ (0, 1)`.
    pub fn gates(&self) -> Vec<f64> {
        self.gate_logits
            .iter()
            .map(|&l| 1.0 / (1.0 + (-l).exp()))
            .collect()
    }

    /// `ω_k = k / (K_f − 1)`, with `ω = [0]` for a single step.
    pub fn ramp(steps: usize) -> Vec<f64> {
        if steps <= 1 {
            return vec![0.0; steps];
        }
        (0..steps).map(|k| k as f64 / (steps - 1) as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VelocityNet {
    pub cfg: FlowNetConfig,
    pub params: ParamSet,
}

fn time_features(t: &[f64], count: usize) -> Tensor {
    let half = count / 2;
    let mut d = Vec::with_capacity(t.len() * count);
    for &ti in t {
        for i in 0..half {
            let a = std::f64::consts::PI * (i + 1) as f64 * ti;
            d.push(a.sin());
            d.push(a.cos());
        }
    }
    Tensor::new(vec![t.len(), 1, 1, count], d).expect("sized above")
}

/// `tokens(k,n) += α·g_k·(b(n) + ω_k·d(n))` with `b = Tok(z(−1))` and
/// `d = Tok(z(−1)) − Tok(z(−2))`. `tok` is the shared tokenizer layer name.
pub fn fuse_history(
    tape: &mut Tape,
    bp: &BoundParams,
    tok: &str,
    tokens: Var,
    z_hist: Var,
    alpha: Var,
    gate_logits: Var,
) -> Result<Var> {
    let ts = tape.shape(tokens).to_vec();
    let hs = tape.shape(z_hist).to_vec();
    if ts.len() != 4 || hs.len() != 4 || hs[0] != ts[0] || hs[2] != ts[2] {
        return Err(invalid(
            "fuse_history",
            format!("tokens {ts:?} vs history {hs:?}"),
        ));
    }
    let kp = hs[1];
    if kp < 2 {
        return Err(invalid(
            "fuse_history",
            "need at least two history latent steps",
        ));
    }
    let kf = ts[1];
    if tape.shape(gate_logits) != [kf] {
        return Err(invalid("fuse_history", "one gate per future step required"));
    }
    let last = tape.slice(z_hist, 1, kp - 1, 1)?;
    let prev = tape.slice(z_hist, 1, kp - 2, 1)?;
    let b = dense(tape, bp, tok, last)?;
    let p = dense(tape, bp, tok, prev)?;
    let d = tape.sub(b, p)?;
    let b = tape.expand(b, &ts)?;
    let d = tape.expand(d, &ts)?;
    let omega = tape.constant(Tensor::new(vec![1, kf, 1, 1], FusionParams::ramp(kf))?);
    let omega = tape.expand(omega, &ts)?;
    let od = tape.mul(omega, d)?;
    let hint = tape.add(b, od)?;
    let g = tape.sigmoid(gate_logits);
    let g = tape.reshape(g, &[1, kf, 1, 1])?;
    let g = tape.expand(g, &ts)?;
    let gh = tape.mul(g, hint)?;
    let inj = tape.mul(alpha, gh)?;
    Ok(tape.add(tokens, inj)?)
}

impl VelocityNet {
    pub fn init(cfg: FlowNetConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (c, n, k, kp, d) = (
            cfg.latent_channels,
            cfg.tokens,
            cfg.future_steps,
            cfg.history_steps,
            cfg.hidden,
        );
        let mut ps = ParamSet::new();
        init_dense(&mut ps, "vel.tok", c, d, 1.0, rng);
        init_dense(&mut ps, "vel.time", cfg.time_features, d, 1.0, rng);
        init_dense(&mut ps, "vel.cond", kp * (c + 1), d, 1.0, rng);
        ps.insert("vel.pos_s", rng.draw_normal(&[1, 1, n, d]).scale(0.02));
        ps.insert("vel.pos_t", rng.draw_normal(&[1, k, 1, d]).scale(0.02));
        if cfg.fusion {
            ps.insert("vel.fusion.alpha", Tensor::full(&[1], cfg.fusion_alpha));
            ps.insert("vel.fusion.gate", Tensor::zeros(&[k]));
        }
        for i in 0..cfg.blocks {
            init_block(&mut ps, &format!("vel.b{i}"), k, n, d, rng);
        }
        init_dense(&mut ps, "vel.out", d, c, 0.1, rng);
        Ok(VelocityNet { cfg, params: ps })
    }

    pub fn fusion_params(&self) -> Result<Option<FusionParams>> {
        if !self.cfg.fusion {
            return Ok(None);
        }
        Ok(Some(FusionParams {
            alpha: self.params.get("vel.fusion.alpha")?.item(),
            gate_logits: self.params.get("vel.fusion.gate")?.data().to_vec(),
        }))
    }

    /// `v_θ(z_t, t, c)` for a batch; `t` holds one flow time per item.
    pub fn forward_var(
        &self,
        tape: &mut Tape,
        bp: &BoundParams,
        z_t: Var,
        t: &[f64],
        cond: &FlowCondition,
    ) -> Result<Var> {
        let cfg = &self.cfg;
        let shape = tape.shape(z_t).to_vec();
        let b = shape.first().copied().unwrap_or(0);
        if shape != cfg.latent_shape(b) || t.len() != b {
            return Err(invalid(
                "velocity",
                format!(
                    "z_t {shape:?} with {} times; expected {:?}",
                    t.len(),
                    cfg.latent_shape(b)
                ),
            ));
        }
        let (n, c, kp, d) = (
            cfg.tokens,
            cfg.latent_channels,
            cfg.history_steps,
            cfg.hidden,
        );
        if cond.z_hist.shape() != [b, kp, n, c] || cond.hist_vis.shape() != [b, kp, n] {
            return Err(invalid(
                "velocity",
                format!(
                    "condition {:?} / {:?} does not match batch {b}",
                    cond.z_hist.shape(),
                    cond.hist_vis.shape()
                ),
            ));
        }
        let mut h = dense(tape, bp, "vel.tok", z_t)?;
        let zh = tape.constant(cond.z_hist.clone());
        if cfg.fusion {
            let alpha = bp.get("vel.fusion.alpha")?;
            let gates = bp.get("vel.fusion.gate")?;
            h = fuse_history(tape, bp, "vel.tok", h, zh, alpha, gates)?;
        }
        let tf = tape.constant(time_features(t, cfg.time_features));
        let te = dense(tape, bp, "vel.time", tf)?;
        let te = tape.gelu(te);
        h = add_broadcast(tape, h, te)?;

        let zc = tape.permute(zh, &[0, 2, 1, 3])?;
        let zc = tape.reshape(zc, &[b, n, kp * c])?;
        let hv = tape.constant(cond.hist_vis.clone());
        let hv = tape.permute(hv, &[0, 2, 1])?;
        let feats = tape.concat(&[zc, hv], 2)?;
        let ce = dense(tape, bp, "vel.cond", feats)?;
        let ce = tape.gelu(ce);
        let ce = tape.reshape(ce, &[b, 1, n, d])?;
        h = add_broadcast(tape, h, ce)?;
        h = add_broadcast(tape, h, bp.get("vel.pos_s")?)?;
        h = add_broadcast(tape, h, bp.get("vel.pos_t")?)?;
        for i in 0..cfg.blocks {
            h = block(tape, bp, &format!("vel.b{i}"), h)?;
        }
        dense(tape, bp, "vel.out", h)
    }

    /// Evaluate without gradients.
    pub fn forward(&self, z_t: &Tensor, t: &[f64], cond: &FlowCondition) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bp = self.params.bind_frozen(&mut tape);
        let z = tape.constant(z_t.clone());
        let v = self.forward_var(&mut tape, &bp, z, t, cond)?;
        Ok(tape.value(v).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints_inclusive() {
        assert_eq!(FusionParams::ramp(3), vec![0.0, 0.5, 1.0]);
        assert_eq!(FusionParams::ramp(1), vec![0.0]);
    }

    #[test]
    fn gates_start_at_one_half() {
        let f = FusionParams {
            alpha: 0.1,
            gate_logits: vec![0.0; 4],
        };
        assert!(f.gates().iter().all(|&g| g == 0.5));
    }

    #[test]
    fn fusion_needs_two_history_steps() {
        let cfg = FlowNetConfig {
            history_steps: 1,
            ..FlowNetConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
