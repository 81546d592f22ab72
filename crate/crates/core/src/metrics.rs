//! Reference-free flow diagnostics on the coarse track grid, endpoint error,
//! and the between/within location variance decomposition.

use crate::error::{invalid, Result};
use crate::trajfield::{normalize, SparseTracks};

/// Frame-to-frame displacement per track, valid where both frames are visible.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFlow {
    /// Flow frames; frame `t` here is the displacement from `t` to `t + 1`.
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    /// `(T−1) × rows × cols × 2`, pixels per frame.
    pub flow: Vec<f64>,
    /// `(T−1) × rows × cols`.
    pub valid: Vec<bool>,
}

impl GridFlow {
    pub fn at(&self, t: usize, i: usize, j: usize) -> [f64; 2] {
        let o = ((t * self.rows + i) * self.cols + j) * 2;
        [self.flow[o], self.flow[o + 1]]
    }

    pub fn is_valid(&self, t: usize, i: usize, j: usize) -> bool {
        self.valid[(t * self.rows + i) * self.cols + j]
    }
}

pub fn flow_from_positions(tracks: &SparseTracks) -> Result<GridFlow> {
    if tracks.frames < 2 {
        return Err(invalid("flow", "need at least two frames"));
    }
    let n = tracks.num_tracks();
    let frames = tracks.frames - 1;
    let mut flow = Vec::with_capacity(frames * n * 2);
    let mut valid = Vec::with_capacity(frames * n);
    for t in 1..tracks.frames {
        for k in 0..n {
            let [x1, y1] = tracks.position(t, k);
            let [x0, y0] = tracks.position(t - 1, k);
            flow.push(x1 - x0);
            flow.push(y1 - y0);
            valid.push(tracks.visible(t, k) && tracks.visible(t - 1, k));
        }
    }
    Ok(GridFlow {
        frames,
        rows: tracks.grid.cells_h(),
        cols: tracks.grid.cells_w(),
        flow,
        valid,
    })
}

fn check_grid(flow: &GridFlow) -> Result<()> {
    if flow.rows < 2 && flow.cols < 2 {
        return Err(invalid(
            "flow metric",
            "grid needs a neighbor in some direction",
        ));
    }
    Ok(())
}

/// Time-averaged total variation of the flow with forward differences over `s`.
pub fn flow_tv(tracks: &SparseTracks) -> Result<f64> {
    let flow = flow_from_positions(tracks)?;
    check_grid(&flow)?;
    let s = tracks.grid.stride as f64;
    let mut total = 0.0;
    let mut any = false;
    for t in 0..flow.frames {
        let (mut sx, mut nx, mut sy, mut ny) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..flow.rows {
            for j in 0..flow.cols {
                if !flow.is_valid(t, i, j) {
                    continue;
                }
                let [u, v] = flow.at(t, i, j);
                if j + 1 < flow.cols && flow.is_valid(t, i, j + 1) {
                    let [u2, v2] = flow.at(t, i, j + 1);
                    sx += ((u2 - u) / s).abs() + ((v2 - v) / s).abs();
                    nx += 1;
                }
                if i + 1 < flow.rows && flow.is_valid(t, i + 1, j) {
                    let [u2, v2] = flow.at(t, i + 1, j);
                    sy += ((u2 - u) / s).abs() + ((v2 - v) / s).abs();
                    ny += 1;
                }
            }
        }
        if nx > 0 {
            total += sx / nx as f64;
        }
        if ny > 0 {
            total += sy / ny as f64;
        }
        any |= nx + ny > 0;
    }
    if !any {
        return Err(invalid("flow_tv", "no valid neighbor pair at any frame"));
    }
    Ok(total / flow.frames as f64)
}

/// Time-averaged squared divergence plus squared curl. With `double_stride`
/// the forward differences (already over `s`) are divided by `s` once more.
pub fn div_curl_energy(tracks: &SparseTracks, double_stride: bool) -> Result<f64> {
    let flow = flow_from_positions(tracks)?;
    if flow.rows < 2 || flow.cols < 2 {
        return Err(invalid("div_curl_energy", "grid must be at least 2x2"));
    }
    let s = tracks.grid.stride as f64;
    let outer = if double_stride { s } else { 1.0 };
    let mut total = 0.0;
    let mut any = false;
    for t in 0..flow.frames {
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..flow.rows - 1 {
            for j in 0..flow.cols - 1 {
                if !(flow.is_valid(t, i, j)
                    && flow.is_valid(t, i, j + 1)
                    && flow.is_valid(t, i + 1, j))
                {
                    continue;
                }
                let [u, v] = flow.at(t, i, j);
                let [ux, vx] = flow.at(t, i, j + 1);
                let [uy, vy] = flow.at(t, i + 1, j);
                let (dxu, dxv) = ((ux - u) / s, (vx - v) / s);
                let (dyu, dyv) = ((uy - u) / s, (vy - v) / s);
                let div = (dxu + dyv) / outer;
                let curl = (dxv - dyu) / outer;
                sum += div * div + curl * curl;
                count += 1;
            }
        }
        if count > 0 {
            total += sum / count as f64;
            any = true;
        }
    }
    if !any {
        return Err(invalid("div_curl_energy", "no valid cell at any frame"));
    }
    Ok(total / flow.frames as f64)
}

/// Mean Euclidean endpoint error in pixels over points visible in the reference.
pub fn vepe(pred: &SparseTracks, gt: &SparseTracks) -> Result<f64> {
    if pred.grid != gt.grid || pred.frames != gt.frames {
        return Err(invalid("vepe", "prediction and reference shapes differ"));
    }
    vepe_raw(&pred.coords, &gt.coords, &gt.visibility)
}

/// [`vepe`] on flat `[.., 2]` coordinate buffers.
pub fn vepe_raw(pred: &[f64], gt: &[f64], visibility: &[bool]) -> Result<f64> {
    if pred.len() != gt.len() || pred.len() != visibility.len() * 2 {
        return Err(invalid("vepe", "buffer lengths disagree"));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (k, &v) in visibility.iter().enumerate() {
        if v {
            let dx = pred[2 * k] - gt[2 * k];
            let dy = pred[2 * k + 1] - gt[2 * k + 1];
            sum += dx.hypot(dy);
            count += 1;
        }
    }
    if count == 0 {
        return Err(invalid("vepe", "no visible point"));
    }
    Ok(sum / count as f64)
}

/// Percentage of variance explained by location, per coordinate axis.
///
/// `values` is `T × N × 2`. Locations with no visible sample are skipped.
pub fn explained_variance(
    values: &[f64],
    visibility: &[bool],
    frames: usize,
    cells: usize,
) -> Result<[f64; 2]> {
    if values.len() != frames * cells * 2 || visibility.len() != frames * cells {
        return Err(invalid("explained_variance", "buffer lengths disagree"));
    }
    let mut out = [0.0; 2];
    for (axis, slot) in out.iter_mut().enumerate() {
        let mut mus = Vec::new();
        let mut within = Vec::new();
        for n in 0..cells {
            let (mut w, mut s) = (0.0, 0.0);
            for t in 0..frames {
                if visibility[t * cells + n] {
                    w += 1.0;
                    s += values[(t * cells + n) * 2 + axis];
                }
            }
            if w == 0.0 {
                continue;
            }
            let mu = s / w;
            let mut v = 0.0;
            for t in 0..frames {
                if visibility[t * cells + n] {
                    let d = values[(t * cells + n) * 2 + axis] - mu;
                    v += d * d;
                }
            }
            mus.push(mu);
            within.push(v / w);
        }
        if mus.len() < 2 {
            return Err(invalid(
                "explained_variance",
                "need at least two locations with visible samples",
            ));
        }
        let k = mus.len() as f64;
        let mean = mus.iter().sum::<f64>() / k;
        let between = mus.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / k;
        let within = within.iter().sum::<f64>() / k;
        let total = between + within;
        *slot = if total > 0.0 {
            100.0 * between / total
        } else {
            0.0
        };
    }
    Ok(out)
}

/// Normalized absolute coordinates of every track, `T × N × 2`.
pub fn normalized_coords(tracks: &SparseTracks) -> Vec<f64> {
    let (w, h) = (tracks.grid.width as f64, tracks.grid.height as f64);
    tracks
        .coords
        .chunks(2)
        .flat_map(|p| [normalize(p[0], w), normalize(p[1], h)])
        .collect()
}

/// Offsets of every track from its cell-center anchor, `T × N × 2`.
pub fn track_offsets(tracks: &SparseTracks) -> Vec<f64> {
    let g = tracks.grid;
    let n = g.num_tracks();
    let abs = normalized_coords(tracks);
    abs.chunks(2)
        .enumerate()
        .flat_map(|(idx, p)| {
            let k = idx % n;
            let [ax, ay] = g.cell_anchor(k / g.cells_w(), k % g.cells_w());
            [p[0] - ax, p[1] - ay]
        })
        .collect()
}

/// Location-explained variance of absolute coordinates and of anchor offsets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceSplit {
    pub absolute: [f64; 2],
    pub offset: [f64; 2],
}

impl VarianceSplit {
    /// Axis-averaged percentages `(absolute, offset)`.
    pub fn means(&self) -> (f64, f64) {
        (
            0.5 * (self.absolute[0] + self.absolute[1]),
            0.5 * (self.offset[0] + self.offset[1]),
        )
    }
}

pub fn location_variance(tracks: &SparseTracks) -> Result<VarianceSplit> {
    let (t, n) = (tracks.frames, tracks.num_tracks());
    Ok(VarianceSplit {
        absolute: explained_variance(&normalized_coords(tracks), &tracks.visibility, t, n)?,
        offset: explained_variance(&track_offsets(tracks), &tracks.visibility, t, n)?,
    })
}
