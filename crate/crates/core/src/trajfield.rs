//! Stride-grid tracks, dense rasterized fields and the grid-anchor offset encoding.
//!
//! Pixel coordinates map to normalized ones as `2(x + ½)/W − 1`, so integer
//! pixel positions land on pixel centers and agree with the anchor formula.
//! Dense absolute fields are stored in 32-bit floats; anchors are the 32-bit
//! roundings of the formula. Offsets are held in 64-bit floats and computed as
//! `X = D − G` in 64-bit arithmetic, which is exact whenever
//! `|D| ≥ 2⁻²⁹·|G|` or `D = 0`, so `to_absolute(to_offsets(D))` reproduces `D`
//! bit for bit.

use trajloom_grad::Tensor;

use crate::error::{invalid, Result};

/// Frame size and track stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
}

impl GridSpec {
    pub fn new(height: usize, width: usize, stride: usize) -> Result<Self> {
        let g = GridSpec {
            height,
            width,
            stride,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.height == 0 || self.width == 0 {
            return Err(invalid("grid", format!("{self:?} has a zero extent")));
        }
        if !self.height.is_multiple_of(self.stride) || !self.width.is_multiple_of(self.stride) {
            return Err(invalid(
                "grid",
                format!(
                    "{}x{} frame is not divisible by stride {}",
                    self.height, self.width, self.stride
                ),
            ));
        }
        Ok(())
    }

    pub fn cells_h(&self) -> usize {
        self.height / self.stride
    }

    pub fn cells_w(&self) -> usize {
        self.width / self.stride
    }

    pub fn num_tracks(&self) -> usize {
        self.cells_h() * self.cells_w()
    }

    /// One-based track index `⌊h/s⌋·W_c + ⌊w/s⌋ + 1` of pixel `(h, w)`.
    pub fn track_index(&self, h: usize, w: usize) -> usize {
        (h / self.stride) * self.cells_w() + w / self.stride + 1
    }

    /// Pixel-space center of cell `(i, j)` as `(x, y)`.
    pub fn cell_center_px(&self, i: usize, j: usize) -> [f64; 2] {
        let s = self.stride as f64;
        [(j as f64 + 0.5) * s - 0.5, (i as f64 + 0.5) * s - 0.5]
    }

    /// Normalized anchor of the center of cell `(i, j)`.
    pub fn cell_anchor(&self, i: usize, j: usize) -> [f64; 2] {
        let [x, y] = self.cell_center_px(i, j);
        [
            normalize(x, self.width as f64),
            normalize(y, self.height as f64),
        ]
    }

    /// Pixel-center anchor `G(h, w)` in 64-bit precision.
    pub fn anchor(&self, h: usize, w: usize) -> [f64; 2] {
        [
            normalize(w as f64, self.width as f64),
            normalize(h as f64, self.height as f64),
        ]
    }
}

/// Pixel coordinate to normalized coordinate along an axis of `extent` pixels.
pub fn normalize(x: f64, extent: f64) -> f64 {
    2.0 * (x + 0.5) / extent - 1.0
}

/// Inverse of [`normalize`].
pub fn denormalize(n: f64, extent: f64) -> f64 {
    (n + 1.0) * extent / 2.0 - 0.5
}

/// Per-cell point tracks: pixel `(x, y)` per frame and a visibility bit.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTracks {
    pub grid: GridSpec,
    pub frames: usize,
    /// `T × N × 2`, row-major.
    pub coords: Vec<f64>,
    /// `T × N`.
    pub visibility: Vec<bool>,
}

impl SparseTracks {
    pub fn new(
        grid: GridSpec,
        frames: usize,
        coords: Vec<f64>,
        visibility: Vec<bool>,
    ) -> Result<Self> {
        grid.validate()?;
        let n = grid.num_tracks();
        if coords.len() != frames * n * 2 || visibility.len() != frames * n {
            return Err(invalid(
                "tracks",
                format!(
                    "expected {} coordinates and {} visibility flags for {frames} frames x {n} tracks, got {} and {}",
                    frames * n * 2,
                    frames * n,
                    coords.len(),
                    visibility.len()
                ),
            ));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(invalid("tracks", format!("coordinate {i} is not finite")));
        }
        Ok(SparseTracks {
            grid,
            frames,
            coords,
            visibility,
        })
    }

    pub fn num_tracks(&self) -> usize {
        self.grid.num_tracks()
    }

    pub fn position(&self, t: usize, n: usize) -> [f64; 2] {
        let o = (t * self.num_tracks() + n) * 2;
        [self.coords[o], self.coords[o + 1]]
    }

    pub fn visible(&self, t: usize, n: usize) -> bool {
        self.visibility[t * self.num_tracks() + n]
    }

    /// Frames `[start, start + len)`.
    pub fn frame_range(&self, start: usize, len: usize) -> Result<SparseTracks> {
        if start + len > self.frames {
            return Err(invalid(
                "tracks",
                format!("frames {start}..{} out of {}", start + len, self.frames),
            ));
        }
        let n = self.num_tracks();
        SparseTracks::new(
            self.grid,
            len,
            self.coords[start * n * 2..(start + len) * n * 2].to_vec(),
            self.visibility[start * n..(start + len) * n].to_vec(),
        )
    }
}

/// Dense normalized coordinate field `D` and mask `M` on the pixel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseField {
    pub grid: GridSpec,
    pub frames: usize,
    /// `T × H × W × 2`.
    pub coords: Vec<f32>,
    /// `T × H × W`.
    pub mask: Vec<bool>,
}

/// Normalized pixel-center anchors `G`, rounded to 32-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorGrid {
    pub height: usize,
    pub width: usize,
    /// `H × W × 2`.
    pub g: Vec<f32>,
}

impl AnchorGrid {
    pub fn new(height: usize, width: usize) -> Self {
        let mut g = Vec::with_capacity(height * width * 2);
        for h in 0..height {
            for w in 0..width {
                g.push(normalize(w as f64, width as f64) as f32);
                g.push(normalize(h as f64, height as f64) as f32);
            }
        }
        AnchorGrid { height, width, g }
    }

    pub fn at(&self, h: usize, w: usize) -> [f32; 2] {
        let o = (h * self.width + w) * 2;
        [self.g[o], self.g[o + 1]]
    }
}

/// Offset field `X = D − G` with the mask carried through.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField {
    pub grid: GridSpec,
    pub frames: usize,
    /// `T × H × W × 2`.
    pub offsets: Vec<f64>,
    /// `T × H × W`.
    pub mask: Vec<bool>,
}

/// Rasterize stride-grid tracks into a dense field.
pub fn rasterize(tracks: &SparseTracks) -> Result<DenseField> {
    let grid = tracks.grid;
    grid.validate()?;
    let (h_px, w_px) = (grid.height, grid.width);
    let (wf, hf) = (w_px as f64, h_px as f64);
    let t_len = tracks.frames;
    let mut coords = Vec::with_capacity(t_len * h_px * w_px * 2);
    let mut mask = Vec::with_capacity(t_len * h_px * w_px);
    for t in 0..t_len {
        for h in 0..h_px {
            for w in 0..w_px {
                let n = grid.track_index(h, w) - 1;
                let [x, y] = tracks.position(t, n);
                coords.push(normalize(x, wf) as f32);
                coords.push(normalize(y, hf) as f32);
                mask.push(tracks.visible(t, n));
            }
        }
    }
    Ok(DenseField {
        grid,
        frames: t_len,
        coords,
        mask,
    })
}

pub fn to_offsets(field: &DenseField) -> OffsetField {
    let anchors = AnchorGrid::new(field.grid.height, field.grid.width);
    let hw2 = anchors.g.len();
    let offsets = field
        .coords
        .iter()
        .enumerate()
        .map(|(i, &d)| d as f64 - anchors.g[i % hw2] as f64)
        .collect();
    OffsetField {
        grid: field.grid,
        frames: field.frames,
        offsets,
        mask: field.mask.clone(),
    }
}

pub fn to_absolute(offsets: &OffsetField) -> DenseField {
    let anchors = AnchorGrid::new(offsets.grid.height, offsets.grid.width);
    let hw2 = anchors.g.len();
    let coords = offsets
        .offsets
        .iter()
        .enumerate()
        .map(|(i, &x)| (x + anchors.g[i % hw2] as f64) as f32)
        .collect();
    DenseField {
        grid: offsets.grid,
        frames: offsets.frames,
        coords,
        mask: offsets.mask.clone(),
    }
}

fn check_split(frames: usize, past: usize, future: usize) -> Result<()> {
    if past == 0 || future == 0 || past + future != frames {
        return Err(invalid(
            "split_windows",
            format!("windows {past} + {future} must be positive and sum to {frames}"),
        ));
    }
    Ok(())
}

/// Split a field into a past window of `past` frames and a future window of `future` frames.
pub fn split_windows(
    field: &DenseField,
    past: usize,
    future: usize,
) -> Result<(DenseField, DenseField)> {
    check_split(field.frames, past, future)?;
    let hw = field.grid.height * field.grid.width;
    let part = |a: usize, b: usize| DenseField {
        grid: field.grid,
        frames: b - a,
        coords: field.coords[a * hw * 2..b * hw * 2].to_vec(),
        mask: field.mask[a * hw..b * hw].to_vec(),
    };
    Ok((part(0, past), part(past, past + future)))
}

impl DenseField {
    /// Concatenate along time.
    pub fn concat(&self, other: &DenseField) -> Result<DenseField> {
        if self.grid != other.grid {
            return Err(invalid("concat", "grids differ"));
        }
        let mut out = self.clone();
        out.frames += other.frames;
        out.coords.extend_from_slice(&other.coords);
        out.mask.extend_from_slice(&other.mask);
        Ok(out)
    }

    pub fn at(&self, t: usize, h: usize, w: usize) -> [f32; 2] {
        let o = ((t * self.grid.height + h) * self.grid.width + w) * 2;
        [self.coords[o], self.coords[o + 1]]
    }

    pub fn visible(&self, t: usize, h: usize, w: usize) -> bool {
        self.mask[(t * self.grid.height + h) * self.grid.width + w]
    }
}

impl OffsetField {
    pub fn new(grid: GridSpec, frames: usize, offsets: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        grid.validate()?;
        let hw = grid.height * grid.width;
        if offsets.len() != frames * hw * 2 || mask.len() != frames * hw {
            return Err(invalid(
                "offsets",
                format!(
                    "{frames} frames on a {}x{} grid need {} offsets and {} mask entries, got {} and {}",
                    grid.height,
                    grid.width,
                    frames * hw * 2,
                    frames * hw,
                    offsets.len(),
                    mask.len()
                ),
            ));
        }
        Ok(OffsetField {
            grid,
            frames,
            offsets,
            mask,
        })
    }

    pub fn split_windows(&self, past: usize, future: usize) -> Result<(OffsetField, OffsetField)> {
        check_split(self.frames, past, future)?;
        Ok((self.frame_range(0, past), self.frame_range(past, future)))
    }

    /// Frames `[start, start + len)`; panics when out of range.
    pub fn frame_range(&self, start: usize, len: usize) -> OffsetField {
        let hw = self.grid.height * self.grid.width;
        OffsetField {
            grid: self.grid,
            frames: len,
            offsets: self.offsets[start * hw * 2..(start + len) * hw * 2].to_vec(),
            mask: self.mask[start * hw..(start + len) * hw].to_vec(),
        }
    }

    /// Offsets as a `[T, H, W, 2]` tensor.
    pub fn offsets_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.frames, self.grid.height, self.grid.width, 2],
            self.offsets.clone(),
        )
        .expect("validated extents")
    }

    /// Mask as a `[T, H, W]` tensor of zeros and ones.
    pub fn mask_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.frames, self.grid.height, self.grid.width],
            self.mask
                .iter()
                .map(|&m| if m { 1.0 } else { 0.0 })
                .collect(),
        )
        .expect("validated extents")
    }

    /// Collapse to one track per stride cell: pixel positions from the cell mean
    /// of `X + G` (exact for piecewise-constant fields), visibility by majority.
    pub fn to_tracks(&self) -> SparseTracks {
        let g = self.grid;
        let s = g.stride;
        let n = g.num_tracks();
        let area = (s * s) as f64;
        let mut coords = vec![0.0; self.frames * n * 2];
        let mut vis_count = vec![0usize; self.frames * n];
        for t in 0..self.frames {
            for h in 0..g.height {
                for w in 0..g.width {
                    let k = g.track_index(h, w) - 1;
                    let [gx, gy] = g.anchor(h, w);
                    let o = ((t * g.height + h) * g.width + w) * 2;
                    coords[(t * n + k) * 2] += (self.offsets[o] + gx) / area;
                    coords[(t * n + k) * 2 + 1] += (self.offsets[o + 1] + gy) / area;
                    if self.mask[o / 2] {
                        vis_count[t * n + k] += 1;
                    }
                }
            }
        }
        for c in coords.chunks_mut(2) {
            c[0] = denormalize(c[0], g.width as f64);
            c[1] = denormalize(c[1], g.height as f64);
        }
        let visibility = vis_count.iter().map(|&c| 2 * c >= s * s).collect();
        SparseTracks {
            grid: g,
            frames: self.frames,
            coords,
            visibility,
        }
    }
}

/// Rasterize then offset-encode.
pub fn encode_tracks(tracks: &SparseTracks) -> Result<OffsetField> {
    Ok(to_offsets(&rasterize(tracks)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn track_index_examples() {
        let g = GridSpec::new(480, 832, 32).unwrap();
        assert_eq!(g.cells_w(), 26);
        assert_eq!(g.track_index(0, 0), 1);
        assert_eq!(g.track_index(32, 0), 27);
        assert_eq!(g.track_index(31, 31), 1);
        assert_eq!(g.track_index(479, 831), 390);
    }

    #[test]
    fn indivisible_grid_rejected() {
        assert!(GridSpec::new(30, 32, 4).is_err());
        assert!(GridSpec::new(32, 33, 4).is_err());
    }

    #[test]
    fn two_by_two_anchor() {
        let a = AnchorGrid::new(2, 2);
        assert_eq!(a.at(0, 0), [-0.5, -0.5]);
        assert_eq!(a.at(1, 1), [0.5, 0.5]);
    }

    #[test]
    fn normalize_round_trip() {
        for x in [0.0, 3.25, 31.0, -2.0] {
            assert!((denormalize(normalize(x, 32.0), 32.0) - x).abs() < 1e-12);
        }
        assert_eq!(normalize(-0.5, 32.0), -1.0);
        assert_eq!(normalize(31.5, 32.0), 1.0);
    }

    #[test]
    fn split_rejects_bad_sizes() {
        let g = GridSpec::new(2, 2, 1).unwrap();
        let f = DenseField {
            grid: g,
            frames: 3,
            coords: vec![0.0; 24],
            mask: vec![true; 12],
        };
        assert!(split_windows(&f, 3, 0).is_err());
        assert!(split_windows(&f, 1, 1).is_err());
        let (p, q) = split_windows(&f, 1, 2).unwrap();
        assert_eq!((p.frames, q.frames), (1, 2));
    }
}
