//! Training objectives.
//!
//! Every loss has a graph form (`*_var`) that records onto a [`Tape`] and a
//! value form that evaluates it on constants. Segment tensors are laid out as
//! `[..., T, H, W, 2]` with masks `[..., T, H, W]`; any leading dimensions are
//! treated as a batch and normalization runs over the whole batch. Latent
//! tensors are `[..., K, N, C]` with token weights `[..., K, N]`.

use trajloom_grad::{shape_len, Tape, Tensor, Var};

use crate::error::{invalid, Result};

/// Target segment, reconstruction and visibility mask.
#[derive(Clone, Debug)]
pub struct SegmentPair {
    pub target: Tensor,
    pub recon: Tensor,
    pub mask: Tensor,
}

impl SegmentPair {
    pub fn new(target: Tensor, recon: Tensor, mask: Tensor) -> Result<Self> {
        check_segment("segment", target.shape(), &mask)?;
        if recon.shape() != target.shape() {
            return Err(invalid(
                "segment",
                format!(
                    "reconstruction {:?} vs target {:?}",
                    recon.shape(),
                    target.shape()
                ),
            ));
        }
        Ok(SegmentPair {
            target,
            recon,
            mask,
        })
    }
}

/// Spatial hop distances and their weights.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSpec {
    pub hops: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Default for NeighborSpec {
    fn default() -> Self {
        NeighborSpec {
            hops: vec![1, 2, 4],
            weights: vec![1.0, 0.5, 0.25],
        }
    }
}

impl NeighborSpec {
    pub fn new(hops: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if hops.is_empty() || hops.len() != weights.len() {
            return Err(invalid("neighbors", "need one weight per hop"));
        }
        if hops.contains(&0) || weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(invalid("neighbors", "hops and weights must be positive"));
        }
        Ok(NeighborSpec { hops, weights })
    }
}

/// Normalized per-token weights `w_Λ`, shaped `[..., K, N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenWeights {
    pub weights: Tensor,
}

impl TokenWeights {
    /// `1/|Λ|` everywhere for `batch` items of `k × n` tokens.
    pub fn uniform(batch: usize, k: usize, n: usize) -> Self {
        TokenWeights {
            weights: Tensor::full(&[batch, k, n], 1.0 / (k * n) as f64),
        }
    }

    /// Stack per-item weights along a new leading axis.
    pub fn stack(items: &[&TokenWeights]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| invalid("token_weights", "nothing to stack"))?;
        let inner = first.weights.shape().to_vec();
        let mut data = Vec::with_capacity(items.len() * first.weights.len());
        for w in items {
            if w.weights.shape() != inner.as_slice() {
                return Err(invalid(
                    "token_weights",
                    "cannot stack differently shaped weights",
                ));
            }
            data.extend_from_slice(w.weights.data());
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&inner);
        Ok(TokenWeights {
            weights: Tensor::new(shape, data)?,
        })
    }
}

fn check_segment(what: &'static str, shape: &[usize], mask: &Tensor) -> Result<()> {
    let r = shape.len();
    if r < 4 || shape[r - 1] != 2 {
        return Err(invalid(
            what,
            format!("expected [..., T, H, W, 2], got {shape:?}"),
        ));
    }
    if mask.shape() != &shape[..r - 1] {
        return Err(invalid(
            what,
            format!("mask {:?} does not match segment {shape:?}", mask.shape()),
        ));
    }
    if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(invalid(what, "mask must be binary"));
    }
    Ok(())
}

/// `(batch, T, H, W)` of a segment shape.
fn seg_dims(shape: &[usize]) -> (usize, usize, usize, usize) {
    let r = shape.len();
    (
        shape_len(&shape[..r - 4]),
        shape[r - 4],
        shape[r - 3],
        shape[r - 2],
    )
}

/// Repeat each mask entry over the two coordinate channels and scale.
fn channel_weights(mask: &[f64], scale: f64, shape: &[usize]) -> Result<Tensor> {
    let data = mask.iter().flat_map(|&m| [m * scale, m * scale]).collect();
    Ok(Tensor::new(shape.to_vec(), data)?)
}

/// Masked Huber reconstruction loss, summed over coordinates and normalized by the visible count.
pub fn recon_loss_var(
    tape: &mut Tape,
    recon: Var,
    target: &Tensor,
    mask: &Tensor,
    delta: f64,
) -> Result<Var> {
    check_segment("recon_loss", target.shape(), mask)?;
    if tape.shape(recon) != target.shape() {
        return Err(invalid(
            "recon_loss",
            format!(
                "reconstruction {:?} vs target {:?}",
                tape.shape(recon),
                target.shape()
            ),
        ));
    }
    if !(delta > 0.0) {
        return Err(invalid("recon_loss", "Huber threshold must be positive"));
    }
    let visible = mask.sum();
    if visible == 0.0 {
        return Err(invalid("recon_loss", "no visible element"));
    }
    let t = tape.constant(target.clone());
    let r = tape.sub(recon, t)?;
    let h = tape.huber(r, delta);
    let w = tape.constant(channel_weights(mask.data(), 1.0 / visible, target.shape())?);
    let wh = tape.mul(h, w)?;
    Ok(tape.sum(wh)?)
}

/// Pair-masked mean L1 mismatch of frame-to-frame displacements.
pub fn temporal_loss_var(
    tape: &mut Tape,
    recon: Var,
    target: &Tensor,
    mask: &Tensor,
) -> Result<Var> {
    check_segment("temporal_loss", target.shape(), mask)?;
    let (b, t_len, h, w) = seg_dims(target.shape());
    if t_len < 2 {
        return Err(invalid("temporal_loss", "need at least two frames"));
    }
    let hw = h * w;
    let m = mask.data();
    let mut pair = Vec::with_capacity(b * (t_len - 1) * hw);
    for bi in 0..b {
        for t in 1..t_len {
            let cur = (bi * t_len + t) * hw;
            let prev = cur - hw;
            pair.extend((0..hw).map(|p| m[cur + p] * m[prev + p]));
        }
    }
    let count: f64 = pair.iter().sum();
    if count == 0.0 {
        return Err(invalid("temporal_loss", "no valid temporal pair"));
    }
    let tc = tape.constant(target.clone());
    let r = tape.sub(recon, tc)?;
    let r = tape.reshape(r, &[b, t_len, hw * 2])?;
    let later = tape.slice(r, 1, 1, t_len - 1)?;
    let earlier = tape.slice(r, 1, 0, t_len - 1)?;
    let d = tape.sub(later, earlier)?;
    let a = tape.abs(d);
    let wt = tape.constant(channel_weights(
        &pair,
        1.0 / count,
        &[b, t_len - 1, hw * 2],
    )?);
    let wa = tape.mul(a, wt)?;
    Ok(tape.sum(wa)?)
}

/// Multi-hop neighbor-difference mismatch in the +x and +y directions.
pub fn spatial_loss_var(
    tape: &mut Tape,
    recon: Var,
    target: &Tensor,
    mask: &Tensor,
    spec: &NeighborSpec,
) -> Result<Var> {
    check_segment("spatial_loss", target.shape(), mask)?;
    let (b, t_len, h, w) = seg_dims(target.shape());
    let frames = b * t_len;
    let m = mask.data();
    let tc = tape.constant(target.clone());
    let r = tape.sub(recon, tc)?;
    let r = tape.reshape(r, &[frames, h, w, 2])?;

    // Per hop: (pair masks per direction, total count).
    struct HopTerms {
        alpha: f64,
        count: f64,
        x: Option<Vec<f64>>,
        y: Option<Vec<f64>>,
    }
    let mut hops = Vec::new();
    for (&d, &alpha) in spec.hops.iter().zip(&spec.weights) {
        let mut count = 0.0;
        let x = (w > d).then(|| {
            let mut pm = Vec::with_capacity(frames * h * (w - d));
            for f in 0..frames {
                for i in 0..h {
                    for j in 0..w - d {
                        let o = (f * h + i) * w + j;
                        pm.push(m[o] * m[o + d]);
                    }
                }
            }
            count += pm.iter().sum::<f64>();
            pm
        });
        let y = (h > d).then(|| {
            let mut pm = Vec::with_capacity(frames * (h - d) * w);
            for f in 0..frames {
                for i in 0..h - d {
                    for j in 0..w {
                        let o = (f * h + i) * w + j;
                        pm.push(m[o] * m[o + d * w]);
                    }
                }
            }
            count += pm.iter().sum::<f64>();
            pm
        });
        if count > 0.0 {
            hops.push((d, HopTerms { alpha, count, x, y }));
        }
    }
    if hops.is_empty() {
        return Err(invalid("spatial_loss", "no valid neighbor pair at any hop"));
    }
    let alpha_sum: f64 = hops.iter().map(|(_, hp)| hp.alpha).sum();
    let mut terms = Vec::new();
    for (d, hp) in hops {
        let scale = hp.alpha / (alpha_sum * hp.count);
        for (axis, pm) in [(2usize, hp.x), (1usize, hp.y)] {
            let Some(pm) = pm else { continue };
            let extent = if axis == 2 { w } else { h };
            let ahead = tape.slice(r, axis, d, extent - d)?;
            let base = tape.slice(r, axis, 0, extent - d)?;
            let diff = tape.sub(ahead, base)?;
            let a = tape.abs(diff);
            let shape = tape.shape(a).to_vec();
            let wt = tape.constant(channel_weights(&pm, scale, &shape)?);
            let wa = tape.mul(a, wt)?;
            terms.push(tape.sum(wa)?);
        }
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(total)
}

/// `λ_temporal·L_temporal + λ_spatial·L_spatial`; a zero weight skips its term.
pub fn st_regularizer_var(
    tape: &mut Tape,
    recon: Var,
    target: &Tensor,
    mask: &Tensor,
    spec: &NeighborSpec,
    lambda_temporal: f64,
    lambda_spatial: f64,
) -> Result<Var> {
    let mut total = tape.scalar(0.0);
    if lambda_temporal != 0.0 {
        let lt = temporal_loss_var(tape, recon, target, mask)?;
        let lt = tape.scale(lt, lambda_temporal);
        total = tape.add(total, lt)?;
    }
    if lambda_spatial != 0.0 {
        let ls = spatial_loss_var(tape, recon, target, mask, spec)?;
        let ls = tape.scale(ls, lambda_spatial);
        total = tape.add(total, ls)?;
    }
    Ok(total)
}

/// Mean per-element KL divergence of `N(μ, e^logvar)` from `N(0, 1)`.
pub fn kl_loss_var(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    if tape.shape(mu) != tape.shape(logvar) {
        return Err(invalid(
            "kl_loss",
            format!("mu {:?} vs logvar {:?}", tape.shape(mu), tape.shape(logvar)),
        ));
    }
    let m2 = tape.square(mu);
    let ev = tape.exp(logvar);
    let s = tape.add(m2, ev)?;
    let s = tape.sub(s, logvar)?;
    let s = tape.add_scalar(s, -1.0);
    let mean = tape.mean(s)?;
    Ok(tape.scale(mean, 0.5))
}

/// Mean-pool a future mask `[..., T, H, W]` onto the token grid (`ratio` frames
/// by `patch × patch` pixels), floor at `floor`, and normalize per item.
pub fn token_weights(
    mask: &Tensor,
    patch: usize,
    ratio: usize,
    floor: f64,
) -> Result<TokenWeights> {
    let pooled = pool_tokens(mask, patch, ratio, PoolMode::Mean)?;
    let shape = pooled.shape().to_vec();
    let r = shape.len();
    let per_item = shape[r - 2] * shape[r - 1];
    let mut data = pooled.into_data();
    for item in data.chunks_mut(per_item) {
        for v in item.iter_mut() {
            *v = v.max(floor);
        }
        let total: f64 = item.iter().sum();
        if total <= 0.0 {
            return Err(invalid("token_weights", "all token weights are zero"));
        }
        for v in item.iter_mut() {
            *v /= total;
        }
    }
    Ok(TokenWeights {
        weights: Tensor::new(shape, data)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Mean,
    Max,
}

/// Pool `[..., T, H, W]` to `[..., T/ratio, (H/patch)·(W/patch)]`, tokens in row-major patch order.
pub fn pool_tokens(mask: &Tensor, patch: usize, ratio: usize, mode: PoolMode) -> Result<Tensor> {
    let shape = mask.shape();
    let r = shape.len();
    if r < 3 || shape_len(shape) == 0 {
        return Err(invalid(
            "pool_tokens",
            format!("empty or rank-deficient mask {shape:?}"),
        ));
    }
    let (t_len, h, w) = (shape[r - 3], shape[r - 2], shape[r - 1]);
    if patch == 0 || ratio == 0 || h % patch != 0 || w % patch != 0 || t_len % ratio != 0 {
        return Err(invalid(
            "pool_tokens",
            format!("token grid ({ratio} frames, {patch}px) does not divide mask {shape:?}"),
        ));
    }
    let b = shape_len(&shape[..r - 3]);
    let (k, ph, pw) = (t_len / ratio, h / patch, w / patch);
    let n = ph * pw;
    let m = mask.data();
    let cover = (ratio * patch * patch) as f64;
    let mut out = vec![0.0; b * k * n];
    for bi in 0..b {
        for t in 0..t_len {
            for i in 0..h {
                for j in 0..w {
                    let v = m[((bi * t_len + t) * h + i) * w + j];
                    let o = (bi * k + t / ratio) * n + (i / patch) * pw + j / patch;
                    match mode {
                        PoolMode::Mean => out[o] += v / cover,
                        PoolMode::Max => out[o] = out[o].max(v),
                    }
                }
            }
        }
    }
    let mut out_shape = shape[..r - 3].to_vec();
    out_shape.extend_from_slice(&[k, n]);
    Ok(Tensor::new(out_shape, out)?)
}

fn check_weights(what: &'static str, latent: &[usize], weights: &TokenWeights) -> Result<()> {
    let r = latent.len();
    if r < 3 || weights.weights.shape() != &latent[..r - 1] {
        return Err(invalid(
            what,
            format!(
                "token weights {:?} do not match latent {latent:?}",
                weights.weights.shape()
            ),
        ));
    }
    Ok(())
}

/// `(1/C)·Σ_Λ w_Λ ‖f‖²`, averaged over batch items.
pub fn weighted_sq_norm_var(tape: &mut Tape, f: Var, weights: &TokenWeights) -> Result<Var> {
    let shape = tape.shape(f).to_vec();
    check_weights("weighted_norm", &shape, weights)?;
    let r = shape.len();
    let c = shape[r - 1];
    let batch = shape_len(&shape[..r - 3]).max(1);
    let scale = 1.0 / (c * batch) as f64;
    let data = weights
        .weights
        .data()
        .iter()
        .flat_map(|&w| std::iter::repeat_n(w * scale, c))
        .collect();
    let wt = tape.constant(Tensor::new(shape, data)?);
    let sq = tape.square(f);
    let ws = tape.mul(sq, wt)?;
    Ok(tape.sum(ws)?)
}

/// Visibility-weighted flow-matching loss.
pub fn fm_loss_var(
    tape: &mut Tape,
    v_pred: Var,
    u_target: Var,
    weights: &TokenWeights,
) -> Result<Var> {
    if tape.shape(v_pred) != tape.shape(u_target) {
        return Err(invalid(
            "fm_loss",
            format!("{:?} vs {:?}", tape.shape(v_pred), tape.shape(u_target)),
        ));
    }
    let d = tape.sub(v_pred, u_target)?;
    weighted_sq_norm_var(tape, d, weights)
}

/// Endpoint-consistent targets `((z1 − z̃)/max(1−t, c), (z̃ − z0)/max(t, c))`.
pub fn kstep_targets(
    z_i: &Tensor,
    z0: &Tensor,
    z1: &Tensor,
    t_i: f64,
    clamp: f64,
) -> Result<(Tensor, Tensor)> {
    let d1 = (1.0 - t_i).max(clamp);
    let d0 = t_i.max(clamp);
    let v1 = z1.sub(z_i)?.scale(1.0 / d1);
    let v0 = z_i.sub(z0)?.scale(1.0 / d0);
    Ok((v1, v0))
}

/// `mean_i (w1‖v_i − v1_i‖²_w + w0‖v_i − v0_i‖²_w)`.
pub fn kstep_loss_var(
    tape: &mut Tape,
    velocities: &[Var],
    targets: &[(Tensor, Tensor)],
    weights: &TokenWeights,
    w1: f64,
    w0: f64,
) -> Result<Var> {
    if velocities.is_empty() || velocities.len() != targets.len() {
        return Err(invalid(
            "kstep_loss",
            format!(
                "{} velocities vs {} target pairs",
                velocities.len(),
                targets.len()
            ),
        ));
    }
    let mut total = tape.scalar(0.0);
    for (&v, (v1, v0)) in velocities.iter().zip(targets) {
        for (target, weight) in [(v1, w1), (v0, w0)] {
            if weight == 0.0 {
                continue;
            }
            let tc = tape.constant(target.clone());
            let d = tape.sub(v, tc)?;
            let n = weighted_sq_norm_var(tape, d, weights)?;
            let n = tape.scale(n, weight);
            total = tape.add(total, n)?;
        }
    }
    Ok(tape.scale(total, 1.0 / velocities.len() as f64))
}

/// Consistency of implied endpoints `z̃ + (1−t)v` and `z̃ − t·v` between
/// consecutive rollout steps, with the earlier step detached. With
/// `masked == false` the weights are ignored in favour of `1/|Λ|`.
pub fn endpoint_consistency_var(
    tape: &mut Tape,
    states: &[Var],
    velocities: &[Var],
    times: &[f64],
    weights: &TokenWeights,
    masked: bool,
) -> Result<Var> {
    let k = velocities.len();
    if k < 2 {
        return Err(invalid(
            "endpoint_consistency",
            "need at least two rollout steps",
        ));
    }
    if states.len() < k || times.len() < k {
        return Err(invalid(
            "endpoint_consistency",
            format!(
                "{} states and {} times for {k} steps",
                states.len(),
                times.len()
            ),
        ));
    }
    let shape = tape.shape(velocities[0]).to_vec();
    check_weights("endpoint_consistency", &shape, weights)?;
    let uniform;
    let w = if masked {
        weights
    } else {
        let r = shape.len();
        let per_item = (shape[r - 3] * shape[r - 2]) as f64;
        uniform = TokenWeights {
            weights: Tensor::full(&shape[..r - 1], 1.0 / per_item),
        };
        &uniform
    };
    let implied = |tape: &mut Tape, i: usize, detach: bool| -> Result<(Var, Var)> {
        let v = if detach {
            tape.stop_grad(velocities[i])
        } else {
            velocities[i]
        };
        let z = if detach {
            tape.stop_grad(states[i])
        } else {
            states[i]
        };
        let fwd = tape.scale(v, 1.0 - times[i]);
        let back = tape.scale(v, -times[i]);
        Ok((tape.add(z, fwd)?, tape.add(z, back)?))
    };
    let mut total = tape.scalar(0.0);
    for i in 1..k {
        let (p1, p0) = implied(tape, i - 1, true)?;
        let (c1, c0) = implied(tape, i, false)?;
        for (a, b) in [(c1, p1), (c0, p0)] {
            let d = tape.sub(a, b)?;
            let n = weighted_sq_norm_var(tape, d, w)?;
            total = tape.add(total, n)?;
        }
    }
    Ok(tape.scale(total, 1.0 / (k - 1) as f64))
}

/// Mean binary cross-entropy on logits, `softplus(ℓ) − y·ℓ`.
pub fn bce_logits_var(tape: &mut Tape, logits: Var, targets: &Tensor) -> Result<Var> {
    if tape.shape(logits) != targets.shape() {
        return Err(invalid(
            "bce_logits",
            format!(
                "logits {:?} vs targets {:?}",
                tape.shape(logits),
                targets.shape()
            ),
        ));
    }
    if targets.data().iter().any(|&y| !(0.0..=1.0).contains(&y)) {
        return Err(invalid("bce_logits", "targets must lie in [0, 1]"));
    }
    let sp = tape.softplus(logits);
    let y = tape.constant(targets.clone());
    let yl = tape.mul(y, logits)?;
    let l = tape.sub(sp, yl)?;
    Ok(tape.mean(l)?)
}

fn eval(f: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let out = f(&mut tape)?;
    Ok(tape.value(out).item())
}

pub fn recon_loss(pair: &SegmentPair, delta: f64) -> Result<f64> {
    eval(|tape| {
        let r = tape.constant(pair.recon.clone());
        recon_loss_var(tape, r, &pair.target, &pair.mask, delta)
    })
}

pub fn temporal_loss(pair: &SegmentPair) -> Result<f64> {
    eval(|tape| {
        let r = tape.constant(pair.recon.clone());
        temporal_loss_var(tape, r, &pair.target, &pair.mask)
    })
}

pub fn spatial_loss(pair: &SegmentPair, spec: &NeighborSpec) -> Result<f64> {
    eval(|tape| {
        let r = tape.constant(pair.recon.clone());
        spatial_loss_var(tape, r, &pair.target, &pair.mask, spec)
    })
}

pub fn st_regularizer(
    pair: &SegmentPair,
    spec: &NeighborSpec,
    lambda_temporal: f64,
    lambda_spatial: f64,
) -> Result<f64> {
    eval(|tape| {
        let r = tape.constant(pair.recon.clone());
        st_regularizer_var(
            tape,
            r,
            &pair.target,
            &pair.mask,
            spec,
            lambda_temporal,
            lambda_spatial,
        )
    })
}

pub fn kl_loss(mu: &Tensor, logvar: &Tensor) -> Result<f64> {
    eval(|tape| {
        let m = tape.constant(mu.clone());
        let l = tape.constant(logvar.clone());
        kl_loss_var(tape, m, l)
    })
}

pub fn fm_loss(v_pred: &Tensor, u_target: &Tensor, weights: &TokenWeights) -> Result<f64> {
    eval(|tape| {
        let v = tape.constant(v_pred.clone());
        let u = tape.constant(u_target.clone());
        fm_loss_var(tape, v, u, weights)
    })
}

pub fn kstep_loss(
    velocities: &[Tensor],
    targets: &[(Tensor, Tensor)],
    weights: &TokenWeights,
    w1: f64,
    w0: f64,
) -> Result<f64> {
    eval(|tape| {
        let vs: Vec<Var> = velocities
            .iter()
            .map(|v| tape.constant(v.clone()))
            .collect();
        kstep_loss_var(tape, &vs, targets, weights, w1, w0)
    })
}

pub fn endpoint_consistency(
    states: &[Tensor],
    velocities: &[Tensor],
    times: &[f64],
    weights: &TokenWeights,
    masked: bool,
) -> Result<f64> {
    eval(|tape| {
        let zs: Vec<Var> = states.iter().map(|z| tape.constant(z.clone())).collect();
        let vs: Vec<Var> = velocities
            .iter()
            .map(|v| tape.constant(v.clone()))
            .collect();
        endpoint_consistency_var(tape, &zs, &vs, times, weights, masked)
    })
}

pub fn bce_logits(logits: &Tensor, targets: &Tensor) -> Result<f64> {
    eval(|tape| {
        let l = tape.constant(logits.clone());
        bce_logits_var(tape, l, targets)
    })
}
