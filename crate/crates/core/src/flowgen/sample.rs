//! End-to-end future generation from a history window.

use trajloom_grad::{Rng, Tensor};

use super::data::{stack, Clip};
use super::flow::{boundary_init, AnchorMode, LatentStats};
use super::ode::{integrate, SamplerSpec};
use super::train::last_slice;
use crate::error::{invalid, Result};
use crate::lossbank::{pool_tokens, PoolMode};
use crate::models::{threshold_logits, FlowCondition, Vae, VelocityNet, VisibilityHead};
use crate::trajfield::{GridSpec, OffsetField};

/// Frozen models needed to forecast.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub vae: Vae,
    pub net: VelocityNet,
    pub head: VisibilityHead,
    pub stats: LatentStats,
}

#[derive(Clone, Debug)]
pub struct SampleOptions {
    pub sampler: SamplerSpec,
    pub anchor_mode: AnchorMode,
    pub sigma0: f64,
    pub vis_threshold: f64,
}

/// Forecast for one history window.
#[derive(Clone, Debug)]
pub struct Forecast {
    pub field: OffsetField,
    /// Token visibility `[K_f, N]` as predicted.
    pub token_visibility: Vec<bool>,
    /// Normalized future latents `[1, K_f, N, C]`.
    pub latents: Tensor,
}

/// Up-broadcast token visibility `[B, K, N]` to `[B, K·r, H, W]`.
fn expand_tokens(
    vis: &[bool],
    batch: usize,
    k: usize,
    grid: &GridSpec,
    patch: usize,
    ratio: usize,
) -> Vec<bool> {
    let (h, w) = (grid.height, grid.width);
    let pw = w / patch;
    let n = (h / patch) * pw;
    let t_len = k * ratio;
    let mut out = Vec::with_capacity(batch * t_len * h * w);
    for b in 0..batch {
        for t in 0..t_len {
            for i in 0..h {
                for j in 0..w {
                    out.push(vis[(b * k + t / ratio) * n + (i / patch) * pw + j / patch]);
                }
            }
        }
    }
    out
}

/// Encode histories, integrate from boundary-anchored sources, decode offsets and
/// predict visibility. Sources for all items are drawn from one generator seeded by `seed`.
pub fn sample_futures(
    pipe: &Pipeline,
    histories: &[&OffsetField],
    opts: &SampleOptions,
    seed: u64,
) -> Result<Vec<Forecast>> {
    opts.sampler.validate()?;
    let vc = &pipe.vae.cfg;
    let first = histories
        .first()
        .ok_or_else(|| invalid("sample", "no history"))?;
    let grid = first.grid;
    if histories
        .iter()
        .any(|h| h.grid != grid || h.frames != vc.frames)
    {
        return Err(invalid(
            "sample",
            format!("histories must span {} frames on one grid", vc.frames),
        ));
    }
    let clips: Vec<Clip> = histories.iter().map(|h| Clip::from_field(h)).collect();
    let (x, mask) = stack(&clips.iter().collect::<Vec<_>>())?;
    let z_hist = pipe.stats.normalize(&pipe.vae.encode(&x)?.0)?;
    let cond = FlowCondition {
        hist_vis: pool_tokens(&mask, vc.patch, vc.ratio, PoolMode::Mean)?,
        z_hist,
    };
    let b = histories.len();
    let kf = pipe.net.cfg.future_steps;
    let mut rng = Rng::new(seed);
    let z0 = boundary_init(
        &last_slice(&cond.z_hist)?,
        kf,
        opts.sigma0,
        &mut rng,
        opts.anchor_mode,
    )?;
    let z1 = integrate(
        |z, t| pipe.net.forward(z, &vec![t; b], &cond),
        &z0,
        &opts.sampler,
    )?;
    let logits = pipe.head.logits(&z1)?;
    let vis = threshold_logits(&logits, opts.vis_threshold);
    let decoded = pipe.vae.decode(&pipe.stats.denormalize(&z1)?)?;
    let frames = decoded.shape()[1];
    let mask = expand_tokens(&vis, b, kf, &grid, vc.patch, vc.ratio);
    let n = pipe.net.cfg.tokens;
    let c = pipe.net.cfg.latent_channels;
    let per_field = frames * grid.height * grid.width;
    (0..b)
        .map(|i| {
            let field = OffsetField::new(
                grid,
                frames,
                decoded.data()[i * per_field * 2..(i + 1) * per_field * 2].to_vec(),
                mask[i * (kf * vc.ratio * grid.height * grid.width)..][..per_field].to_vec(),
            )?;
            Ok(Forecast {
                field,
                token_visibility: vis[i * kf * n..(i + 1) * kf * n].to_vec(),
                latents: Tensor::new(
                    vec![1, kf, n, c],
                    z1.data()[i * kf * n * c..(i + 1) * kf * n * c].to_vec(),
                )?,
            })
        })
        .collect()
}

/// [`sample_futures`] for a single history.
pub fn sample_future(
    pipe: &Pipeline,
    history: &OffsetField,
    opts: &SampleOptions,
    seed: u64,
) -> Result<Forecast> {
    Ok(sample_futures(pipe, &[history], opts, seed)?.remove(0))
}
