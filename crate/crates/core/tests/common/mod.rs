//! Brute-force reference implementations written independently of the library.
#![allow(dead_code)]

use trajloom_core::trajfield::{GridSpec, SparseTracks};
use trajloom_grad::{Rng, Tensor};

pub fn random_tracks(grid: GridSpec, frames: usize, vis_prob: f64, rng: &mut Rng) -> SparseTracks {
    let n = grid.num_tracks();
    let coords = (0..frames * n * 2)
        .map(|_| rng.uniform_range(-4.0, grid.width as f64 + 4.0))
        .collect();
    let visibility = (0..frames * n).map(|_| rng.uniform() < vis_prob).collect();
    SparseTracks::new(grid, frames, coords, visibility).unwrap()
}

/// Cell `(row, col)` of every track, found by scanning pixels rather than by formula.
fn cell_of(grid: &GridSpec) -> Vec<(usize, usize)> {
    let mut out = vec![(usize::MAX, usize::MAX); grid.num_tracks()];
    for h in 0..grid.height {
        for w in 0..grid.width {
            let k = grid.track_index(h, w) - 1;
            if out[k].0 == usize::MAX {
                out[k] = (h / grid.stride, w / grid.stride);
            }
        }
    }
    out
}

fn displacement(tr: &SparseTracks, t: usize, k: usize) -> Option<[f64; 2]> {
    if !(tr.visible(t, k) && tr.visible(t + 1, k)) {
        return None;
    }
    let a = tr.position(t, k);
    let b = tr.position(t + 1, k);
    Some([b[0] - a[0], b[1] - a[1]])
}

pub fn flow_tv(tr: &SparseTracks) -> f64 {
    let cells = cell_of(&tr.grid);
    let s = tr.grid.stride as f64;
    let n = cells.len();
    let mut total = 0.0;
    for t in 0..tr.frames - 1 {
        let (mut sx, mut nx, mut sy, mut ny) = (0.0, 0.0, 0.0, 0.0);
        for a in 0..n {
            for b in 0..n {
                let (Some(fa), Some(fb)) = (displacement(tr, t, a), displacement(tr, t, b)) else {
                    continue;
                };
                let v = ((fb[0] - fa[0]) / s).abs() + ((fb[1] - fa[1]) / s).abs();
                if cells[b] == (cells[a].0, cells[a].1 + 1) {
                    sx += v;
                    nx += 1.0;
                } else if cells[b] == (cells[a].0 + 1, cells[a].1) {
                    sy += v;
                    ny += 1.0;
                }
            }
        }
        if nx > 0.0 {
            total += sx / nx;
        }
        if ny > 0.0 {
            total += sy / ny;
        }
    }
    total / (tr.frames - 1) as f64
}

pub fn div_curl_energy(tr: &SparseTracks, double_stride: bool) -> f64 {
    let cells = cell_of(&tr.grid);
    let s = tr.grid.stride as f64;
    let outer = if double_stride { s } else { 1.0 };
    let find = |c: (usize, usize)| cells.iter().position(|&x| x == c);
    let mut total = 0.0;
    for t in 0..tr.frames - 1 {
        let (mut sum, mut count) = (0.0, 0.0);
        for a in 0..cells.len() {
            let (i, j) = cells[a];
            let (Some(r), Some(d)) = (find((i, j + 1)), find((i + 1, j))) else {
                continue;
            };
            let (Some(f), Some(fr), Some(fd)) = (
                displacement(tr, t, a),
                displacement(tr, t, r),
                displacement(tr, t, d),
            ) else {
                continue;
            };
            let du_dx = (fr[0] - f[0]) / s / outer;
            let dv_dx = (fr[1] - f[1]) / s / outer;
            let du_dy = (fd[0] - f[0]) / s / outer;
            let dv_dy = (fd[1] - f[1]) / s / outer;
            sum += (du_dx + dv_dy).powi(2) + (dv_dx - du_dy).powi(2);
            count += 1.0;
        }
        if count > 0.0 {
            total += sum / count;
        }
    }
    total / (tr.frames - 1) as f64
}

pub fn vepe(pred: &SparseTracks, gt: &SparseTracks) -> f64 {
    let (mut sum, mut count) = (0.0, 0.0);
    for t in 0..gt.frames {
        for k in 0..gt.num_tracks() {
            if gt.visible(t, k) {
                let p = pred.position(t, k);
                let g = gt.position(t, k);
                sum += ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt();
                count += 1.0;
            }
        }
    }
    sum / count
}

/// Pairwise-difference form: `Var = ½·mean_{a,b}(x_a − x_b)²`.
fn pair_var(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mut s = 0.0;
    for a in x {
        for b in x {
            s += (a - b).powi(2);
        }
    }
    s / (2.0 * n * n)
}

pub fn explained_variance(values: &[f64], vis: &[bool], frames: usize, cells: usize) -> [f64; 2] {
    let mut out = [0.0; 2];
    for axis in 0..2 {
        let mut means = Vec::new();
        let mut within = Vec::new();
        for n in 0..cells {
            let xs: Vec<f64> = (0..frames)
                .filter(|&t| vis[t * cells + n])
                .map(|t| values[(t * cells + n) * 2 + axis])
                .collect();
            if xs.is_empty() {
                continue;
            }
            means.push(xs.iter().sum::<f64>() / xs.len() as f64);
            within.push(pair_var(&xs));
        }
        let between = pair_var(&means);
        let within = within.iter().sum::<f64>() / within.len() as f64;
        out[axis] = if between + within > 0.0 {
            100.0 * between / (between + within)
        } else {
            0.0
        };
    }
    out
}

fn seg_index(shape: &[usize], t: usize, i: usize, j: usize) -> usize {
    (t * shape[1] + i) * shape[2] + j
}

/// Segments here are `[T, H, W, 2]` with masks `[T, H, W]`.
pub fn recon_loss(target: &Tensor, recon: &Tensor, mask: &Tensor, delta: f64) -> f64 {
    let m = mask.data();
    let (mut sum, mut vis) = (0.0, 0.0);
    for p in 0..m.len() {
        if m[p] == 1.0 {
            vis += 1.0;
            for c in 0..2 {
                let r = (recon.data()[2 * p + c] - target.data()[2 * p + c]).abs();
                sum += if r <= delta {
                    0.5 * r * r
                } else {
                    delta * (r - 0.5 * delta)
                };
            }
        }
    }
    sum / vis
}

pub fn temporal_loss(target: &Tensor, recon: &Tensor, mask: &Tensor) -> f64 {
    let sh = mask.shape();
    let (mut sum, mut count) = (0.0, 0.0);
    for t in 1..sh[0] {
        for i in 0..sh[1] {
            for j in 0..sh[2] {
                let (a, b) = (seg_index(sh, t, i, j), seg_index(sh, t - 1, i, j));
                if mask.data()[a] * mask.data()[b] == 0.0 {
                    continue;
                }
                count += 1.0;
                for c in 0..2 {
                    let dr = recon.data()[2 * a + c] - recon.data()[2 * b + c];
                    let dx = target.data()[2 * a + c] - target.data()[2 * b + c];
                    sum += (dr - dx).abs();
                }
            }
        }
    }
    sum / count
}

pub fn spatial_loss(
    target: &Tensor,
    recon: &Tensor,
    mask: &Tensor,
    hops: &[usize],
    weights: &[f64],
) -> f64 {
    let sh = mask.shape();
    let mut terms = Vec::new();
    for (&d, &alpha) in hops.iter().zip(weights) {
        let (mut sum, mut count) = (0.0, 0.0);
        for t in 0..sh[0] {
            for i in 0..sh[1] {
                for j in 0..sh[2] {
                    for (di, dj) in [(0, d), (d, 0)] {
                        if i + di >= sh[1] || j + dj >= sh[2] {
                            continue;
                        }
                        let (a, b) = (seg_index(sh, t, i, j), seg_index(sh, t, i + di, j + dj));
                        if mask.data()[a] * mask.data()[b] == 0.0 {
                            continue;
                        }
                        count += 1.0;
                        for c in 0..2 {
                            let dr = recon.data()[2 * b + c] - recon.data()[2 * a + c];
                            let dx = target.data()[2 * b + c] - target.data()[2 * a + c];
                            sum += (dr - dx).abs();
                        }
                    }
                }
            }
        }
        if count > 0.0 {
            terms.push((alpha, sum / count));
        }
    }
    let norm: f64 = terms.iter().map(|t| t.0).sum();
    terms.iter().map(|(a, v)| a * v).sum::<f64>() / norm
}

/// `[.., K, N, C]` latents with `[.., K, N]` weights; items are averaged.
pub fn weighted_sq(f: &Tensor, w: &Tensor) -> f64 {
    let c = *f.shape().last().unwrap();
    let items = f.shape()[0];
    let mut s = 0.0;
    for (tok, &wt) in w.data().iter().enumerate() {
        for ch in 0..c {
            s += wt * f.data()[tok * c + ch].powi(2);
        }
    }
    s / (c * items) as f64
}

pub fn bce(logits: &[f64], targets: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&l, &y) in logits.iter().zip(targets) {
        let p = 1.0 / (1.0 + (-l).exp());
        s -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    s / logits.len() as f64
}

pub fn random_tensor(shape: &[usize], rng: &mut Rng, scale: f64) -> Tensor {
    rng.draw_normal(shape).scale(scale)
}

pub fn random_mask(shape: &[usize], p: f64, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| if rng.uniform() < p { 1.0 } else { 0.0 })
            .collect(),
    )
    .unwrap()
}

/// Latents `[S, K, N, C]` labelled by the sign of a fixed linear score per token.
pub fn separable_toy(items: usize, seed: u64) -> (Tensor, Tensor) {
    let (k, n, c) = (2, 16, 8);
    let mut wr = Rng::new(0xC0FFEE);
    let w: Vec<f64> = (0..c).map(|_| wr.normal()).collect();
    let mut rng = Rng::new(seed);
    let z = rng.draw_normal(&[items, k, n, c]);
    let y = z
        .data()
        .chunks(c)
        .map(|tok| {
            let s: f64 = tok.iter().zip(&w).map(|(a, b)| a * b).sum();
            if s > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    (z, Tensor::new(vec![items, k, n], y).unwrap())
}

/// Max-pool oracle phrased as "any visible pixel in the block".
pub fn pool_or(mask: &Tensor, patch: usize, ratio: usize) -> Tensor {
    let sh = mask.shape();
    let (t, h, w) = (sh[0], sh[1], sh[2]);
    let (k, pw) = (t / ratio, w / patch);
    let n = (h / patch) * pw;
    let mut out = Vec::with_capacity(k * n);
    for kk in 0..k {
        for tok in 0..n {
            let (pi, pj) = (tok / pw, tok % pw);
            let any = (kk * ratio..(kk + 1) * ratio).any(|tt| {
                (pi * patch..(pi + 1) * patch)
                    .any(|i| (pj * patch..(pj + 1) * patch).any(|j| mask.at(&[tt, i, j]) == 1.0))
            });
            out.push(if any { 1.0 } else { 0.0 });
        }
    }
    Tensor::new(vec![k, n], out).unwrap()
}
