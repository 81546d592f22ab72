//! Synthetic stride-grid scenes with analytic trajectories, the 1-D jitter toy,
//! and camera-motion estimation and captioning from tracks.

use serde::{Deserialize, Serialize};
use trajloom_grad::{Rng, Tensor};

use crate::error::{invalid, Result};
use crate::trajfield::{GridSpec, SparseTracks};

/// Base motion of a scene. Rates are per frame; rotation and zoom act about the image center.
#[derive(Clone, Debug, PartialEq)]
pub enum MotionKind {
    Static,
    Translation {
        vx: f64,
        vy: f64,
    },
    /// Angular rate in radians per frame (positive turns +x toward +y).
    Rotation {
        omega: f64,
    },
    /// Radial scale factor `(1 + rate)` per frame.
    Zoom {
        rate: f64,
    },
    /// Horizontal velocity proportional to the offset from the center row.
    Shear {
        rate: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JitterMode {
    /// `b(−1)^t` on both axes.
    Alternating,
    /// `±b` per track, frame and axis with random signs.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jitter {
    pub amplitude: f64,
    pub mode: JitterMode,
}

/// Axis-aligned pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Rectangle hiding points during frames `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Occlusion {
    pub rect: Rect,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionSpec {
    pub kind: MotionKind,
    pub frames: usize,
    pub grid: GridSpec,
    pub occlusions: Vec<Occlusion>,
    pub jitter: Option<Jitter>,
    /// When set, only tracks starting inside move; the rest stay put.
    pub region: Option<Rect>,
}

impl MotionSpec {
    pub fn new(kind: MotionKind, frames: usize, grid: GridSpec) -> Self {
        MotionSpec {
            kind,
            frames,
            grid,
            occlusions: Vec::new(),
            jitter: None,
            region: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.frames == 0 {
            return Err(invalid("motion", "need at least one frame"));
        }
        let finite = match self.kind {
            MotionKind::Static => true,
            MotionKind::Translation { vx, vy } => vx.is_finite() && vy.is_finite(),
            MotionKind::Rotation { omega } => omega.is_finite(),
            MotionKind::Zoom { rate } => rate.is_finite() && rate > -1.0,
            MotionKind::Shear { rate } => rate.is_finite(),
        };
        if !finite {
            return Err(invalid(
                "motion",
                format!("bad parameters in {:?}", self.kind),
            ));
        }
        if let Some(j) = self.jitter {
            if !j.amplitude.is_finite() {
                return Err(invalid("motion", "jitter amplitude must be finite"));
            }
        }
        let (w, h) = (self.grid.width as f64, self.grid.height as f64);
        for o in &self.occlusions {
            let r = o.rect;
            if !(r.x0 >= 0.0
                && r.y0 >= 0.0
                && r.x1 <= w
                && r.y1 <= h
                && r.x0 <= r.x1
                && r.y0 <= r.y1)
            {
                return Err(invalid(
                    "motion",
                    format!("occlusion {r:?} is not inside the frame"),
                ));
            }
        }
        Ok(())
    }
}

/// Image center in pixel coordinates.
pub fn frame_center(grid: &GridSpec) -> [f64; 2] {
    [
        (grid.width as f64 - 1.0) / 2.0,
        (grid.height as f64 - 1.0) / 2.0,
    ]
}

fn displace(kind: &MotionKind, p0: [f64; 2], c: [f64; 2], t: f64) -> [f64; 2] {
    let (dx, dy) = (p0[0] - c[0], p0[1] - c[1]);
    match *kind {
        MotionKind::Static => p0,
        MotionKind::Translation { vx, vy } => [p0[0] + vx * t, p0[1] + vy * t],
        MotionKind::Rotation { omega } => {
            let (s, co) = (omega * t).sin_cos();
            [c[0] + co * dx - s * dy, c[1] + s * dx + co * dy]
        }
        MotionKind::Zoom { rate } => {
            let f = (1.0 + rate).powf(t);
            [c[0] + f * dx, c[1] + f * dy]
        }
        MotionKind::Shear { rate } => [p0[0] + rate * t * dy, p0[1]],
    }
}

/// Tracks start at stride-cell centers and follow the analytic motion.
/// Visibility drops where an occluder covers a point or it leaves the frame.
pub fn generate(spec: &MotionSpec, rng: &mut Rng) -> Result<SparseTracks> {
    spec.validate()?;
    let g = spec.grid;
    let n = g.num_tracks();
    let c = frame_center(&g);
    let (w, h) = (g.width as f64, g.height as f64);
    let mut coords = Vec::with_capacity(spec.frames * n * 2);
    let mut visibility = Vec::with_capacity(spec.frames * n);
    for t in 0..spec.frames {
        for k in 0..n {
            let p0 = g.cell_center_px(k / g.cells_w(), k % g.cells_w());
            let moving = spec.region.is_none_or(|r| r.contains(p0[0], p0[1]));
            let mut p = if moving {
                displace(&spec.kind, p0, c, t as f64)
            } else {
                p0
            };
            if let Some(j) = spec.jitter {
                match j.mode {
                    JitterMode::Alternating => {
                        let s = if t % 2 == 0 {
                            j.amplitude
                        } else {
                            -j.amplitude
                        };
                        p[0] += s;
                        p[1] += s;
                    }
                    JitterMode::Random => {
                        for v in p.iter_mut() {
                            *v += if rng.uniform() < 0.5 {
                                -j.amplitude
                            } else {
                                j.amplitude
                            };
                        }
                    }
                }
            }
            let inside = p[0] >= -0.5 && p[0] <= w - 0.5 && p[1] >= -0.5 && p[1] <= h - 0.5;
            let hidden = spec
                .occlusions
                .iter()
                .any(|o| t >= o.start && t < o.end && o.rect.contains(p[0], p[1]));
            coords.extend_from_slice(&p);
            visibility.push(inside && !hidden);
        }
    }
    SparseTracks::new(g, spec.frames, coords, visibility)
}

/// A random base motion confined to a random rectangle spanning a quarter of
/// each side up to the whole frame; tracks outside it stay put. A positive
/// `tracker_noise` adds random `±amplitude` pixel jitter to every track.
pub fn mixed_scene_spec(
    grid: GridSpec,
    frames: usize,
    tracker_noise: f64,
    rng: &mut Rng,
) -> MotionSpec {
    let (w, h) = (grid.width as f64, grid.height as f64);
    let kind = match rng.below(4) {
        0 => {
            let a = rng.uniform_range(0.0, std::f64::consts::TAU);
            let speed = rng.uniform_range(0.5, 1.5);
            MotionKind::Translation {
                vx: speed * a.cos(),
                vy: speed * a.sin(),
            }
        }
        1 => MotionKind::Rotation {
            omega: rng.uniform_range(-0.05, 0.05),
        },
        2 => MotionKind::Zoom {
            rate: rng.uniform_range(-0.04, 0.04),
        },
        _ => MotionKind::Shear {
            rate: rng.uniform_range(-0.05, 0.05),
        },
    };
    let (rw, rh) = (
        rng.uniform_range(0.25, 1.0) * w,
        rng.uniform_range(0.25, 1.0) * h,
    );
    let (x0, y0) = (
        rng.uniform_range(0.0, w - rw),
        rng.uniform_range(0.0, h - rh),
    );
    let mut spec = MotionSpec::new(kind, frames, grid);
    spec.region = Some(Rect {
        x0,
        y0,
        x1: x0 + rw,
        y1: y0 + rh,
    });
    if tracker_noise > 0.0 {
        spec.jitter = Some(Jitter {
            amplitude: tracker_noise,
            mode: JitterMode::Random,
        });
    }
    spec
}

/// Ground truth `x = t`, smooth `t + b` and jittery `t + b(−1)^t` sequences.
#[derive(Clone, Debug)]
pub struct ToyPair {
    /// Each `[T, 1, TOY_WIDTH, 2]`: every point carries the sequence in its x
    /// coordinate and zero in y.
    pub truth: Tensor,
    pub smooth: Tensor,
    pub jitter: Tensor,
    /// `[T, 1, TOY_WIDTH]`, all ones.
    pub mask: Tensor,
}

/// Points per toy row; wide enough for every default spatial hop.
pub const TOY_WIDTH: usize = 8;

pub fn toy_1d_pair(b: f64, frames: usize) -> Result<ToyPair> {
    if frames < 3 {
        return Err(invalid("toy", "need at least three frames"));
    }
    let build = |f: &dyn Fn(usize) -> f64| {
        let mut d = Vec::with_capacity(frames * TOY_WIDTH * 2);
        for t in 0..frames {
            for _ in 0..TOY_WIDTH {
                d.push(f(t));
                d.push(0.0);
            }
        }
        Tensor::new(vec![frames, 1, TOY_WIDTH, 2], d)
    };
    Ok(ToyPair {
        truth: build(&|t| t as f64)?,
        smooth: build(&|t| t as f64 + b)?,
        jitter: build(&|t| t as f64 + if t % 2 == 0 { b } else { -b })?,
        mask: Tensor::ones(&[frames, 1, TOY_WIDTH]),
    })
}

/// Global camera primitives estimated from tracks, averaged over frame pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraStats {
    /// Pixels per frame.
    pub translation: [f64; 2],
    /// Relative radial scale change per frame.
    pub zoom: f64,
    /// Radians per frame, positive turning +x toward +y.
    pub roll: f64,
    /// RMS pixel residual after removing translation, zoom and roll.
    pub shake: f64,
    pub frame_width: usize,
    pub frame_height: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Minimum tracks visible in both frames of a pair for it to count.
pub const MIN_CAMERA_TRACKS: usize = 4;

/// Per frame pair: translation is the coordinate-wise median displacement; the
/// residual is modelled as a similarity about the image center, `q ↦ (1+z)e^{iθ}q`,
/// with `z` and `θ` the medians of the per-track complex ratios; shake is the
/// RMS of what remains.
pub fn estimate_camera(tracks: &SparseTracks) -> Result<CameraStats> {
    let g = tracks.grid;
    let c = frame_center(&g);
    let n = tracks.num_tracks();
    let radius_floor = 1e-9 * (g.width.max(g.height) as f64);
    let mut acc = [0.0; 5];
    let mut pairs = 0usize;
    for t in 1..tracks.frames {
        let ids: Vec<usize> = (0..n)
            .filter(|&k| tracks.visible(t, k) && tracks.visible(t - 1, k))
            .collect();
        if ids.len() < MIN_CAMERA_TRACKS {
            continue;
        }
        let disp: Vec<[f64; 2]> = ids
            .iter()
            .map(|&k| {
                let a = tracks.position(t - 1, k);
                let b = tracks.position(t, k);
                [b[0] - a[0], b[1] - a[1]]
            })
            .collect();
        let tx = median(&mut disp.iter().map(|d| d[0]).collect::<Vec<_>>());
        let ty = median(&mut disp.iter().map(|d| d[1]).collect::<Vec<_>>());
        let mut zooms = Vec::new();
        let mut rolls = Vec::new();
        for (&k, d) in ids.iter().zip(&disp) {
            let a = tracks.position(t - 1, k);
            let (qx, qy) = (a[0] - c[0], a[1] - c[1]);
            let q2 = qx * qx + qy * qy;
            if q2.sqrt() <= radius_floor {
                continue;
            }
            // (q + r) / q with r the residual displacement.
            let (px, py) = (qx + d[0] - tx, qy + d[1] - ty);
            let re = (px * qx + py * qy) / q2;
            let im = (py * qx - px * qy) / q2;
            zooms.push(re.hypot(im) - 1.0);
            rolls.push(im.atan2(re));
        }
        let (zoom, roll) = if zooms.is_empty() {
            (0.0, 0.0)
        } else {
            (median(&mut zooms), median(&mut rolls))
        };
        let (s, co) = roll.sin_cos();
        let f = 1.0 + zoom;
        let mut sq = 0.0;
        for (&k, d) in ids.iter().zip(&disp) {
            let a = tracks.position(t - 1, k);
            let (qx, qy) = (a[0] - c[0], a[1] - c[1]);
            let mx = f * (co * qx - s * qy) - qx + tx;
            let my = f * (s * qx + co * qy) - qy + ty;
            sq += (d[0] - mx).powi(2) + (d[1] - my).powi(2);
        }
        let shake = (sq / ids.len() as f64).sqrt();
        for (slot, v) in acc.iter_mut().zip([tx, ty, zoom, roll, shake]) {
            *slot += v;
        }
        pairs += 1;
    }
    if pairs == 0 {
        return Err(invalid(
            "estimate_camera",
            format!("no frame pair has {MIN_CAMERA_TRACKS} tracks visible in both frames"),
        ));
    }
    let p = pairs as f64;
    Ok(CameraStats {
        translation: [acc[0] / p, acc[1] / p],
        zoom: acc[2] / p,
        roll: acc[3] / p,
        shake: acc[4] / p,
        frame_width: g.width,
        frame_height: g.height,
    })
}

/// Caption thresholds; translation and shake in normalized units per frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptionThresholds {
    pub translation: f64,
    pub zoom: f64,
    pub roll: f64,
    /// Handheld when shake exceeds this multiple of the largest systematic magnitude.
    pub shake_factor: f64,
    /// A primitive is fast when its magnitude exceeds this multiple of its threshold.
    pub fast_factor: f64,
}

impl Default for CaptionThresholds {
    fn default() -> Self {
        CaptionThresholds {
            translation: 0.002,
            zoom: 0.003,
            roll: 0.003,
            shake_factor: 1.5,
            fast_factor: 4.0,
        }
    }
}

/// Map camera statistics to a phrase such as `"camera pans right, fast"`.
pub fn caption(stats: &CameraStats, th: &CaptionThresholds) -> String {
    let (w, h) = (
        stats.frame_width.max(1) as f64,
        stats.frame_height.max(1) as f64,
    );
    let tx = 2.0 * stats.translation[0] / w;
    let ty = 2.0 * stats.translation[1] / h;
    let shake = 2.0 * stats.shake / w.max(h);
    let trans = tx.hypot(ty);
    let systematic = trans.max(stats.zoom.abs()).max(stats.roll.abs());
    if shake > th.translation && shake > th.shake_factor * systematic {
        return "handheld camera".to_string();
    }
    let candidates = [
        (trans / th.translation, 0usize),
        (stats.zoom.abs() / th.zoom, 1),
        (stats.roll.abs() / th.roll, 2),
    ];
    let (ratio, which) =
        candidates
            .iter()
            .copied()
            .fold((0.0, 0), |best, c| if c.0 > best.0 { c } else { best });
    if ratio < 1.0 {
        return "static camera".to_string();
    }
    let motion = match which {
        0 if tx.abs() >= ty.abs() => {
            if tx > 0.0 {
                "pans right"
            } else {
                "pans left"
            }
        }
        0 => {
            if ty > 0.0 {
                "tilts down"
            } else {
                "tilts up"
            }
        }
        1 => {
            if stats.zoom > 0.0 {
                "zooms in"
            } else {
                "zooms out"
            }
        }
        _ => {
            if stats.roll > 0.0 {
                "rolls clockwise"
            } else {
                "rolls counterclockwise"
            }
        }
    };
    let speed = if ratio >= th.fast_factor {
        "fast"
    } else {
        "slow"
    };
    format!("camera {motion}, {speed}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn zero_stats_caption() {
        let s = CameraStats {
            translation: [0.0, 0.0],
            zoom: 0.0,
            roll: 0.0,
            shake: 0.0,
            frame_width: 64,
            frame_height: 64,
        };
        assert_eq!(caption(&s, &CaptionThresholds::default()), "static camera");
    }

    #[test]
    fn occlusion_outside_frame_rejected() {
        let g = GridSpec::new(16, 16, 4).unwrap();
        let mut spec = MotionSpec::new(MotionKind::Static, 2, g);
        spec.occlusions.push(Occlusion {
            rect: Rect {
                x0: 0.0,
                y0: 0.0,
                x1: 20.0,
                y1: 4.0,
            },
            start: 0,
            end: 1,
        });
        assert!(generate(&spec, &mut Rng::new(0)).is_err());
    }
}
