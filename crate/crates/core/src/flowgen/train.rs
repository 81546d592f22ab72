//! Training loops: autoencoder, flow-matching pretraining with the visibility
//! head, and on-policy K-step fine-tuning.

use std::fmt::Write as _;

use trajloom_grad::{optim_step, BoundParams, OptimState, ParamSet, Rng, Tape, Tensor, Var};

use super::data::{stack, Clip, Scene};
use super::flow::{
    boundary_init, interpolate, kstep_rollout_var, sample_time, FlowProblem, LatentStats,
};
use super::ode::{euler_sample, TimeGrid};
use crate::config::{FinetuneConfig, FlowTrainConfig, VaeTrainConfig};
use crate::error::{invalid, Error, Result};
use crate::lossbank::{
    bce_logits_var, endpoint_consistency_var, fm_loss, fm_loss_var, kl_loss_var, kstep_loss_var,
    kstep_targets, pool_tokens, recon_loss, recon_loss_var, st_regularizer_var, temporal_loss,
    token_weights, PoolMode, SegmentPair, TokenWeights,
};
use crate::metrics::vepe;
use crate::models::{slice_batch, FlowCondition, Vae, VelocityNet, VisibilityHead};
use crate::trajfield::OffsetField;

/// Per-step loss values; the first column is the optimized total.
#[derive(Clone, Debug, PartialEq)]
pub struct LossCurve {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl LossCurve {
    pub fn new(columns: &[&'static str]) -> Self {
        LossCurve {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[0]).collect()
    }

    /// `step,<columns>` with one row per step.
    pub fn to_csv(&self) -> String {
        let mut s = format!("step,{}\n", self.columns.join(","));
        for (i, r) in self.rows.iter().enumerate() {
            let vals: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{i},{}", vals.join(","));
        }
        s
    }
}

fn check_loss(tape: &Tape, v: Var, what: &'static str, step: usize) -> Result<f64> {
    let x = tape.value(v).item();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite { what, step })
    }
}

fn apply(
    tape: &mut Tape,
    bp: &BoundParams,
    loss: Var,
    params: &mut ParamSet,
    state: &mut OptimState,
) -> Result<()> {
    let grads = tape.backward(loss)?;
    let g = bp.collect(tape, &grads);
    optim_step(params, &g, state)?;
    Ok(())
}

fn pick(rng: &mut Rng, n: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.below(n)).collect()
}

#[derive(Clone, Debug)]
pub struct VaeRun {
    pub vae: Vae,
    pub curve: LossCurve,
}

/// Optimize `L_rec + L_st + β·KL` on random windows of `clips`.
pub fn train_vae(mut vae: Vae, clips: &[Clip], cfg: &VaeTrainConfig, seed: u64) -> Result<VaeRun> {
    let mut curve = LossCurve::new(&["total", "rec", "st", "kl"]);
    if cfg.steps == 0 {
        return Ok(VaeRun { vae, curve });
    }
    let seg = vae.cfg.frames;
    if clips.is_empty() || clips.iter().any(|c| c.frames() < seg) {
        return Err(invalid(
            "train_vae",
            format!("need clips of at least {seg} frames"),
        ));
    }
    let spec = cfg.neighbors()?;
    let mut rng = Rng::new(seed);
    let mut state = OptimState::new(&vae.params, cfg.optim.adamw());
    for step in 0..cfg.steps {
        let idx = pick(&mut rng, clips.len(), cfg.batch);
        let windows = idx
            .iter()
            .map(|&i| clips[i].window(rng.below(clips[i].frames() - seg + 1), seg))
            .collect::<Result<Vec<_>>>()?;
        let (x, mask) = stack(&windows.iter().collect::<Vec<_>>())?;
        let mut tape = Tape::new();
        let bp = vae.params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let (mu, lv) = vae.encode_var(&mut tape, &bp, xv)?;
        let eps = rng.draw_normal(tape.shape(mu));
        let z = crate::models::reparameterize_var(&mut tape, mu, lv, &eps)?;
        let recon = vae.decode_var(&mut tape, &bp, z)?;
        let rec = recon_loss_var(&mut tape, recon, &x, &mask, cfg.huber_delta)?;
        let st = st_regularizer_var(
            &mut tape,
            recon,
            &x,
            &mask,
            &spec,
            cfg.lambda_temporal,
            cfg.lambda_spatial,
        )?;
        let kl = kl_loss_var(&mut tape, mu, lv)?;
        let bkl = tape.scale(kl, cfg.beta);
        let total = tape.add(rec, st)?;
        let total = tape.add(total, bkl)?;
        let row = vec![
            check_loss(&tape, total, "vae loss", step)?,
            tape.value(rec).item(),
            tape.value(st).item(),
            tape.value(kl).item(),
        ];
        apply(&mut tape, &bp, total, &mut vae.params, &mut state)?;
        curve.rows.push(row);
    }
    Ok(VaeRun { vae, curve })
}

/// Encoded past/future pairs with everything flow training needs, one row per scene.
#[derive(Clone, Debug)]
pub struct LatentCorpus {
    /// Normalized posterior means `[S, K_p, N, C]`.
    pub z_past: Tensor,
    /// Normalized posterior means `[S, K_f, N, C]`.
    pub z_future: Tensor,
    /// Mean-pooled history visibility `[S, K_p, N]`.
    pub hist_vis: Tensor,
    /// Future token weights `[S, K_f, N]`.
    pub weights: Tensor,
    /// Max-pooled future visibility `[S, K_f, N]`.
    pub vis_targets: Tensor,
    pub stats: LatentStats,
}

impl LatentCorpus {
    pub fn len(&self) -> usize {
        self.z_past.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
        let s = t.shape();
        let per = t.len() / s[0].max(1);
        let mut d = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            d.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
        }
        let mut shape = s.to_vec();
        shape[0] = idx.len();
        Ok(Tensor::new(shape, d)?)
    }

    /// Items `idx` as `(z_past, z_future, condition, weights, visibility targets)`.
    pub fn select(
        &self,
        idx: &[usize],
    ) -> Result<(Tensor, Tensor, FlowCondition, TokenWeights, Tensor)> {
        let z_past = Self::gather(&self.z_past, idx)?;
        let cond = FlowCondition {
            z_hist: z_past.clone(),
            hist_vis: Self::gather(&self.hist_vis, idx)?,
        };
        Ok((
            z_past,
            Self::gather(&self.z_future, idx)?,
            cond,
            TokenWeights {
                weights: Self::gather(&self.weights, idx)?,
            },
            Self::gather(&self.vis_targets, idx)?,
        ))
    }
}

/// Encode `[past | future]` windows of every clip with posterior means and
/// normalize channels with `stats`, or with statistics fit on this corpus.
pub fn encode_corpus(
    vae: &Vae,
    clips: &[Clip],
    past: usize,
    stats: Option<&LatentStats>,
    invisible_weight: f64,
) -> Result<LatentCorpus> {
    let seg = vae.cfg.frames;
    if clips.is_empty() || clips.iter().any(|c| c.frames() != past + seg) || past != seg {
        return Err(invalid(
            "encode_corpus",
            format!("clips must hold {seg} past and {seg} future frames"),
        ));
    }
    let pasts = clips
        .iter()
        .map(|c| c.window(0, past))
        .collect::<Result<Vec<_>>>()?;
    let futures = clips
        .iter()
        .map(|c| c.window(past, seg))
        .collect::<Result<Vec<_>>>()?;
    let (xp, mp) = stack(&pasts.iter().collect::<Vec<_>>())?;
    let (xf, mf) = stack(&futures.iter().collect::<Vec<_>>())?;
    let zp = vae.encode(&xp)?.0;
    let zf = vae.encode(&xf)?.0;
    let stats = match stats {
        Some(s) => s.clone(),
        None => LatentStats::fit(&[&zp, &zf])?,
    };
    let (patch, ratio) = (vae.cfg.patch, vae.cfg.ratio);
    Ok(LatentCorpus {
        z_past: stats.normalize(&zp)?,
        z_future: stats.normalize(&zf)?,
        hist_vis: pool_tokens(&mp, patch, ratio, PoolMode::Mean)?,
        weights: token_weights(&mf, patch, ratio, invisible_weight)?.weights,
        vis_targets: pool_tokens(&mf, patch, ratio, PoolMode::Max)?,
        stats,
    })
}

/// Last history latent `[B, 1, N, C]`.
pub fn last_slice(z_past: &Tensor) -> Result<Tensor> {
    let s = z_past.shape();
    let (b, k, per) = (s[0], s[1], s[2] * s[3]);
    let mut d = Vec::with_capacity(b * per);
    for bi in 0..b {
        let o = (bi * k + k - 1) * per;
        d.extend_from_slice(&z_past.data()[o..o + per]);
    }
    Ok(Tensor::new(vec![b, 1, s[2], s[3]], d)?)
}

/// One flow-matching batch: problem, per-item times, interpolant and target.
struct FmBatch {
    problem: FlowProblem,
    t: Vec<f64>,
    zt: Tensor,
    u: Tensor,
}

fn fm_batch(
    corpus: &LatentCorpus,
    idx: &[usize],
    cfg: &FlowTrainConfig,
    rng: &mut Rng,
) -> Result<(FmBatch, Tensor)> {
    let (z_past, z1, cond, weights, vis) = corpus.select(idx)?;
    let kf = z1.shape()[1];
    let z0 = boundary_init(&last_slice(&z_past)?, kf, cfg.sigma0, rng, cfg.anchor_mode)?;
    let problem = FlowProblem {
        z0,
        z1,
        cond,
        weights,
        sigma: cfg.sigma,
        sigma0: cfg.sigma0,
    };
    let t: Vec<f64> = (0..idx.len()).map(|_| sample_time(rng)).collect();
    let (zt, u) = interpolate(&problem, &t, rng)?;
    Ok((FmBatch { problem, t, zt, u }, vis))
}

fn fm_term(tape: &mut Tape, bp: &BoundParams, net: &VelocityNet, b: &FmBatch) -> Result<Var> {
    let zt = tape.constant(b.zt.clone());
    let v = net.forward_var(tape, bp, zt, &b.t, &b.problem.cond)?;
    let u = tape.constant(b.u.clone());
    fm_loss_var(tape, v, u, &b.problem.weights)
}

#[derive(Clone, Debug)]
pub struct FlowRun {
    pub net: VelocityNet,
    pub head: VisibilityHead,
    pub curve: LossCurve,
}

/// Flow-matching pretraining of the velocity field, with the visibility head
/// trained alongside on the same batches.
pub fn train_flow(
    mut net: VelocityNet,
    mut head: VisibilityHead,
    corpus: &LatentCorpus,
    cfg: &FlowTrainConfig,
    seed: u64,
) -> Result<FlowRun> {
    let mut curve = LossCurve::new(&["fm", "vis"]);
    if cfg.steps == 0 {
        return Ok(FlowRun { net, head, curve });
    }
    if corpus.is_empty() {
        return Err(invalid("train_flow", "empty corpus"));
    }
    let mut rng = Rng::new(seed);
    let mut state = OptimState::new(&net.params, cfg.optim.adamw());
    let mut vstate = OptimState::new(&head.params, cfg.optim.adamw());
    for step in 0..cfg.steps {
        let idx = pick(&mut rng, corpus.len(), cfg.batch);
        let (b, vis) = fm_batch(corpus, &idx, cfg, &mut rng)?;
        let mut tape = Tape::new();
        let bp = net.params.bind(&mut tape);
        let loss = fm_term(&mut tape, &bp, &net, &b)?;
        let fm = check_loss(&tape, loss, "flow loss", step)?;
        apply(&mut tape, &bp, loss, &mut net.params, &mut state)?;

        let mut vt = Tape::new();
        let vbp = head.params.bind(&mut vt);
        let z1 = vt.constant(b.problem.z1.clone());
        let logits = head.logits_var(&mut vt, &vbp, z1)?;
        let bce = bce_logits_var(&mut vt, logits, &vis)?;
        let vl = check_loss(&vt, bce, "visibility loss", step)?;
        apply(&mut vt, &vbp, bce, &mut head.params, &mut vstate)?;
        curve.rows.push(vec![fm, vl]);
    }
    Ok(FlowRun { net, head, curve })
}

/// Train a visibility head alone on latents `[S, K, N, C]` with targets `[S, K, N]`.
pub fn train_visibility(
    mut head: VisibilityHead,
    latents: &Tensor,
    targets: &Tensor,
    steps: usize,
    batch: usize,
    optim: &crate::config::OptimConfig,
    seed: u64,
) -> Result<(VisibilityHead, LossCurve)> {
    let mut curve = LossCurve::new(&["bce"]);
    let n = latents.shape()[0];
    if targets.shape().first() != Some(&n) {
        return Err(invalid(
            "train_visibility",
            "latents and targets disagree on item count",
        ));
    }
    let mut rng = Rng::new(seed);
    let mut state = OptimState::new(&head.params, optim.adamw());
    for step in 0..steps {
        let idx = pick(&mut rng, n, batch);
        let z = LatentCorpus::gather(latents, &idx)?;
        let y = LatentCorpus::gather(targets, &idx)?;
        let mut tape = Tape::new();
        let bp = head.params.bind(&mut tape);
        let zv = tape.constant(z);
        let l = head.logits_var(&mut tape, &bp, zv)?;
        let loss = bce_logits_var(&mut tape, l, &y)?;
        curve
            .rows
            .push(vec![check_loss(&tape, loss, "visibility loss", step)?]);
        apply(&mut tape, &bp, loss, &mut head.params, &mut state)?;
    }
    Ok((head, curve))
}

/// Fine-tuning objective for one batch: `(total, L_fm, Some((L_kstep, L_cons)))`.
fn finetune_loss(
    tape: &mut Tape,
    bp: &BoundParams,
    net: &VelocityNet,
    b: &FmBatch,
    ft: &FinetuneConfig,
    grid: &TimeGrid,
) -> Result<(Var, Var, Option<(Var, Var)>)> {
    let fm = fm_term(tape, bp, net, b)?;
    if ft.lambda_kstep == 0.0 {
        return Ok((fm, fm, None));
    }
    let sb = ft.sub_batch.min(b.problem.batch());
    let z0 = slice_batch(&b.problem.z0, 0, sb)?;
    let z1 = slice_batch(&b.problem.z1, 0, sb)?;
    let cond = b.problem.cond.slice(0, sb)?;
    let w = TokenWeights {
        weights: slice_batch(&b.problem.weights.weights, 0, sb)?,
    };
    let (states, vels) = kstep_rollout_var(tape, &z0, grid, |tape, z, t| {
        net.forward_var(tape, bp, z, &vec![t; sb], &cond)
    })?;
    let times = &grid.times[..grid.steps()];
    let targets = states[..grid.steps()]
        .iter()
        .zip(times)
        .map(|(&s, &t)| kstep_targets(tape.value(s), &z0, &z1, t, ft.denom_clamp))
        .collect::<Result<Vec<_>>>()?;
    let ks = kstep_loss_var(tape, &vels, &targets, &w, ft.w1, ft.w0)?;
    let cons = endpoint_consistency_var(tape, &states, &vels, times, &w, ft.consistency_masked)?;
    let gc = tape.scale(cons, ft.gamma);
    let inner = tape.add(ks, gc)?;
    let inner = tape.scale(inner, ft.lambda_kstep);
    Ok((tape.add(fm, inner)?, fm, Some((ks, cons))))
}

/// `L_fm + λ_kstep·(L_kstep + γ·L_cons)` with the rollout on the first
/// `sub_batch` items of each batch. With `λ_kstep = 0` this is exactly the
/// pretraining objective.
pub fn finetune_onpolicy(
    mut net: VelocityNet,
    corpus: &LatentCorpus,
    ft: &FinetuneConfig,
    flow: &FlowTrainConfig,
    seed: u64,
) -> Result<(VelocityNet, LossCurve)> {
    let mut curve = LossCurve::new(&["total", "fm", "kstep", "cons"]);
    if ft.steps == 0 {
        return Ok((net, curve));
    }
    if corpus.is_empty() {
        return Err(invalid("finetune", "empty corpus"));
    }
    let grid = TimeGrid::with_span(ft.rollout_steps, ft.t_eps, ft.grid_span, ft.spacing)?;
    let mut rng = Rng::new(seed);
    let mut state = OptimState::new(&net.params, ft.optim.adamw());
    for step in 0..ft.steps {
        let idx = pick(&mut rng, corpus.len(), ft.batch);
        let (b, _) = fm_batch(corpus, &idx, flow, &mut rng)?;
        let mut tape = Tape::new();
        let bp = net.params.bind(&mut tape);
        let (total, fm, parts) = finetune_loss(&mut tape, &bp, &net, &b, ft, &grid)?;
        let tv = check_loss(&tape, total, "finetune loss", step)?;
        let fm = tape.value(fm).item();
        let (ks, cs) = parts.map_or((0.0, 0.0), |(k, c)| {
            (tape.value(k).item(), tape.value(c).item())
        });
        apply(&mut tape, &bp, total, &mut net.params, &mut state)?;
        curve.rows.push(vec![tv, fm, ks, cs]);
    }
    Ok((net, curve))
}

/// Flow-matching loss over the whole corpus with draws fixed by `seed`.
pub fn eval_fm_loss(
    net: &VelocityNet,
    corpus: &LatentCorpus,
    cfg: &FlowTrainConfig,
    seed: u64,
) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let (b, _) = fm_batch(corpus, &idx, cfg, &mut rng)?;
    let v = net.forward(&b.zt, &b.t, &b.problem.cond)?;
    fm_loss(&v, &b.u, &b.problem.weights)
}

/// Mean squared latent error of Euler endpoints against `z^f`, with boundary
/// sources drawn from `seed` so that different models see identical sources.
pub fn endpoint_error(
    net: &VelocityNet,
    corpus: &LatentCorpus,
    cfg: &FlowTrainConfig,
    steps: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let (z_past, z1, cond, _, _) = corpus.select(&idx)?;
    let z0 = boundary_init(
        &last_slice(&z_past)?,
        z1.shape()[1],
        cfg.sigma0,
        &mut rng,
        cfg.anchor_mode,
    )?;
    let b = idx.len();
    let zhat = euler_sample(|z, t| net.forward(z, &vec![t; b], &cond), &z0, steps)?;
    Ok(zhat.sub(&z1)?.sq_norm() / z1.len() as f64)
}

/// Reconstruction quality of posterior-mean round trips over non-overlapping windows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeEval {
    /// Mean endpoint error in pixels over visible reference points.
    pub vepe_px: f64,
    pub temporal: f64,
    pub recon: f64,
}

pub fn eval_vae(vae: &Vae, scenes: &[Scene]) -> Result<VaeEval> {
    let seg = vae.cfg.frames;
    let mut windows = Vec::new();
    let mut refs = Vec::new();
    for s in scenes {
        for start in (0..=s.clip.frames().saturating_sub(seg)).step_by(seg) {
            windows.push(s.clip.window(start, seg)?);
            refs.push(s.tracks.frame_range(start, seg)?);
        }
    }
    if windows.is_empty() {
        return Err(invalid("eval_vae", format!("no scene spans {seg} frames")));
    }
    let (x, mask) = stack(&windows.iter().collect::<Vec<_>>())?;
    let recon = vae.decode(&vae.encode(&x)?.0)?;
    let pair = SegmentPair::new(x, recon.clone(), mask.clone())?;
    let grid = scenes[0].tracks.grid;
    let per = windows[0].offsets.len();
    let mut vepe_sum = 0.0;
    for (i, r) in refs.iter().enumerate() {
        let field = OffsetField::new(
            grid,
            seg,
            recon.data()[i * per..(i + 1) * per].to_vec(),
            windows[i].mask.data().iter().map(|&m| m > 0.5).collect(),
        )?;
        vepe_sum += vepe(&field.to_tracks(), r)?;
    }
    Ok(VaeEval {
        vepe_px: vepe_sum / refs.len() as f64,
        temporal: temporal_loss(&pair)?,
        recon: recon_loss(&pair, 1.0)?,
    })
}
