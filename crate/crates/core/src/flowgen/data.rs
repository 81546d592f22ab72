//! Synthetic scene corpora as offset clips ready for batching.

use trajloom_grad::{Rng, Tensor};

use crate::config::{DataConfig, SceneKind};
use crate::error::{invalid, Result};
use crate::motionlab::{generate, Jitter, JitterMode, MotionKind, MotionSpec, Occlusion, Rect};
use crate::trajfield::{encode_tracks, OffsetField, SparseTracks};

/// Offsets `[T, H, W, 2]` and binary mask `[T, H, W]` of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub offsets: Tensor,
    pub mask: Tensor,
}

impl Clip {
    pub fn from_field(f: &OffsetField) -> Clip {
        Clip {
            offsets: f.offsets_tensor(),
            mask: f.mask_tensor(),
        }
    }

    pub fn frames(&self) -> usize {
        self.offsets.shape()[0]
    }

    /// Frames `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Clip> {
        let t = self.frames();
        if len == 0 || start + len > t {
            return Err(invalid(
                "clip window",
                format!("frames {start}..{} of {t}", start + len),
            ));
        }
        let s = self.offsets.shape();
        let per_o = s[1] * s[2] * 2;
        let per_m = s[1] * s[2];
        Ok(Clip {
            offsets: Tensor::new(
                vec![len, s[1], s[2], 2],
                self.offsets.data()[start * per_o..(start + len) * per_o].to_vec(),
            )?,
            mask: Tensor::new(
                vec![len, s[1], s[2]],
                self.mask.data()[start * per_m..(start + len) * per_m].to_vec(),
            )?,
        })
    }
}

/// Stack clips into `([B, T, H, W, 2], [B, T, H, W])`.
pub fn stack(clips: &[&Clip]) -> Result<(Tensor, Tensor)> {
    let first = clips.first().ok_or_else(|| invalid("stack", "no clips"))?;
    let (so, sm) = (first.offsets.shape().to_vec(), first.mask.shape().to_vec());
    let mut o = Vec::with_capacity(clips.len() * first.offsets.len());
    let mut m = Vec::with_capacity(clips.len() * first.mask.len());
    for c in clips {
        if c.offsets.shape() != so || c.mask.shape() != sm {
            return Err(invalid("stack", "clip shapes differ"));
        }
        o.extend_from_slice(c.offsets.data());
        m.extend_from_slice(c.mask.data());
    }
    let mut bo = vec![clips.len()];
    bo.extend(so);
    let mut bm = vec![clips.len()];
    bm.extend(sm);
    Ok((Tensor::new(bo, o)?, Tensor::new(bm, m)?))
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub spec: MotionSpec,
    pub tracks: SparseTracks,
    pub clip: Clip,
}

/// Random motion of `kind` within the configured ranges.
pub fn random_motion(kind: SceneKind, cfg: &DataConfig, rng: &mut Rng) -> MotionKind {
    let signed = |rng: &mut Rng, max: f64| rng.uniform_range(-max, max);
    match kind {
        SceneKind::Static => MotionKind::Static,
        SceneKind::Translation => {
            let angle = rng.uniform_range(0.0, std::f64::consts::TAU);
            let speed = rng.uniform_range(0.25, 1.0) * cfg.max_speed;
            MotionKind::Translation {
                vx: speed * angle.cos(),
                vy: speed * angle.sin(),
            }
        }
        SceneKind::Rotation => MotionKind::Rotation {
            omega: signed(rng, cfg.max_omega),
        },
        SceneKind::Zoom => MotionKind::Zoom {
            rate: signed(rng, cfg.max_zoom),
        },
        SceneKind::Shear => MotionKind::Shear {
            rate: signed(rng, cfg.max_shear),
        },
    }
}

fn random_occlusion(cfg: &DataConfig, frames: usize, rng: &mut Rng) -> Occlusion {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let (ow, oh) = (
        rng.uniform_range(0.15, 0.4) * w,
        rng.uniform_range(0.15, 0.4) * h,
    );
    let x0 = rng.uniform_range(0.0, w - ow);
    let y0 = rng.uniform_range(0.0, h - oh);
    let start = rng.below(frames);
    let end = (start + 1 + rng.below(frames - start)).min(frames);
    Occlusion {
        rect: Rect {
            x0,
            y0,
            x1: x0 + ow,
            y1: y0 + oh,
        },
        start,
        end,
    }
}

/// One scene of a given motion, with an occluder drawn per the config.
pub fn scene_from_motion(
    kind: MotionKind,
    cfg: &DataConfig,
    frames: usize,
    jitter: Option<Jitter>,
    rng: &mut Rng,
) -> Result<Scene> {
    let mut spec = MotionSpec::new(kind, frames, cfg.grid()?);
    spec.jitter = jitter;
    if rng.uniform() < cfg.occlusion_prob {
        spec.occlusions.push(random_occlusion(cfg, frames, rng));
    }
    let tracks = generate(&spec, rng)?;
    let clip = Clip::from_field(&encode_tracks(&tracks)?);
    Ok(Scene { spec, tracks, clip })
}

/// `count` scenes of `past + future` frames cycling through the configured kinds.
pub fn synth_scenes(
    cfg: &DataConfig,
    count: usize,
    jitter: Option<Jitter>,
    rng: &mut Rng,
) -> Result<Vec<Scene>> {
    if cfg.kinds.is_empty() {
        return Err(invalid("synth", "no scene kinds"));
    }
    (0..count)
        .map(|i| {
            let kind = random_motion(cfg.kinds[i % cfg.kinds.len()], cfg, rng);
            scene_from_motion(kind, cfg, cfg.frames(), jitter, rng)
        })
        .collect()
}

/// Training, held-out and jittered held-out scenes drawn from one generator.
#[derive(Clone, Debug)]
pub struct DeskCorpus {
    pub train: Vec<Scene>,
    pub eval: Vec<Scene>,
    /// Held-out scenes with `±JITTER_EVAL_PX` random per-point jitter.
    pub jittered: Vec<Scene>,
}

pub const JITTER_EVAL_PX: f64 = 0.5;

impl DeskCorpus {
    pub fn generate(cfg: &DataConfig, seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let train = synth_scenes(cfg, cfg.train_scenes, None, &mut rng)?;
        let eval = synth_scenes(cfg, cfg.eval_scenes, None, &mut rng)?;
        let jitter = Jitter {
            amplitude: JITTER_EVAL_PX,
            mode: JitterMode::Random,
        };
        let jittered = synth_scenes(cfg, cfg.eval_scenes, Some(jitter), &mut rng)?;
        Ok(DeskCorpus {
            train,
            eval,
            jittered,
        })
    }

    pub fn train_clips(&self) -> Vec<Clip> {
        self.train.iter().map(|s| s.clip.clone()).collect()
    }

    pub fn eval_clips(&self) -> Vec<Clip> {
        self.eval.iter().map(|s| s.clip.clone()).collect()
    }
}
