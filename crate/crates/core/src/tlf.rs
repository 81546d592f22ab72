//! Track files: magic `TRJF`, a fixed little-endian header, coordinates
//! `[T × N × 2]`, then one visibility byte per `(t, n)`.
//!
//! Header after the magic: `u32` version, `u32` T, H_c, W_c, H, W, s, then one
//! byte each for the coordinate convention, the coordinate width in bytes, the
//! origin convention of offset files, and a reserved zero. Absolute
//! coordinates are stored as `f32`; offsets relative to the cell-center anchor
//! as `f64`, which lets offsets convert back to their origin bit-exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::trajfield::{denormalize, normalize, GridSpec, SparseTracks};

pub const MAGIC: &[u8; 4] = b"TRJF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 7 * 4 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Convention {
    Pixel,
    Normalized,
    Offset,
}

impl Convention {
    fn code(self) -> u8 {
        match self {
            Convention::Pixel => 0,
            Convention::Normalized => 1,
            Convention::Offset => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Convention::Pixel),
            1 => Ok(Convention::Normalized),
            2 => Ok(Convention::Offset),
            _ => Err(Error::Format(format!("unknown coordinate convention {c}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Coords {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Coords {
    fn len(&self) -> usize {
        match self {
            Coords::F32(v) => v.len(),
            Coords::F64(v) => v.len(),
        }
    }

    fn get(&self, i: usize) -> f64 {
        match self {
            Coords::F32(v) => v[i] as f64,
            Coords::F64(v) => v[i],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TlfFile {
    pub grid: GridSpec,
    pub frames: usize,
    pub convention: Convention,
    /// Absolute convention the offsets were derived from; equals `convention` otherwise.
    pub origin: Convention,
    pub coords: Coords,
    pub visibility: Vec<bool>,
}

/// `f32` normalized anchor of cell `(i, j)`.
fn anchor32(g: &GridSpec, i: usize, j: usize) -> [f64; 2] {
    let a = g.cell_anchor(i, j);
    [a[0] as f32 as f64, a[1] as f32 as f64]
}

impl TlfFile {
    pub fn validate(&self) -> Result<()> {
        self.grid
            .validate()
            .map_err(|e| Error::Format(e.to_string()))?;
        let n = self.grid.num_tracks();
        if self.coords.len() != self.frames * n * 2 || self.visibility.len() != self.frames * n {
            return Err(Error::Format("payload length does not match header".into()));
        }
        let ok = match (self.convention, &self.coords) {
            (Convention::Offset, Coords::F64(_)) => self.origin != Convention::Offset,
            (c, Coords::F32(_)) => c != Convention::Offset && self.origin == c,
            _ => false,
        };
        if !ok {
            return Err(Error::Format(
                "coordinate width or origin does not fit the convention".into(),
            ));
        }
        Ok(())
    }

    /// Absolute tracks stored as `f32` in `convention` (pixel or normalized).
    pub fn from_tracks(tracks: &SparseTracks, convention: Convention) -> Result<Self> {
        let g = tracks.grid;
        let (w, h) = (g.width as f64, g.height as f64);
        let coords = match convention {
            Convention::Pixel => tracks.coords.iter().map(|&v| v as f32).collect(),
            Convention::Normalized => tracks
                .coords
                .chunks(2)
                .flat_map(|p| [normalize(p[0], w) as f32, normalize(p[1], h) as f32])
                .collect(),
            Convention::Offset => {
                return Err(Error::Format("use to_offsets for offset files".into()));
            }
        };
        Ok(TlfFile {
            grid: g,
            frames: tracks.frames,
            convention,
            origin: convention,
            coords: Coords::F32(coords),
            visibility: tracks.visibility.clone(),
        })
    }

    pub fn num_tracks(&self) -> usize {
        self.grid.num_tracks()
    }

    /// Tracks in `f64` pixels.
    pub fn to_tracks(&self) -> Result<SparseTracks> {
        self.validate()?;
        let g = self.grid;
        let (w, h) = (g.width as f64, g.height as f64);
        let n = g.num_tracks();
        let mut coords = Vec::with_capacity(self.coords.len());
        for i in 0..self.coords.len() / 2 {
            let (a, b) = (self.coords.get(2 * i), self.coords.get(2 * i + 1));
            let p = match self.convention {
                Convention::Pixel => [a, b],
                Convention::Normalized => [denormalize(a, w), denormalize(b, h)],
                Convention::Offset => {
                    let k = i % n;
                    let c = g.cell_center_px(k / g.cells_w(), k % g.cells_w());
                    [a * w / 2.0 + c[0], b * h / 2.0 + c[1]]
                }
            };
            coords.extend_from_slice(&p);
        }
        SparseTracks::new(g, self.frames, coords, self.visibility.clone())
    }

    /// Offsets from the cell-center anchor, in normalized units.
    pub fn to_offsets(&self) -> Result<TlfFile> {
        self.validate()?;
        if self.convention == Convention::Offset {
            return Ok(self.clone());
        }
        let g = self.grid;
        let (w, h) = (g.width as f64, g.height as f64);
        let n = g.num_tracks();
        let mut out = Vec::with_capacity(self.coords.len());
        for i in 0..self.coords.len() / 2 {
            let k = i % n;
            let (ci, cj) = (k / g.cells_w(), k % g.cells_w());
            let (a, b) = (self.coords.get(2 * i), self.coords.get(2 * i + 1));
            match self.convention {
                Convention::Normalized => {
                    let an = anchor32(&g, ci, cj);
                    out.push(a - an[0]);
                    out.push(b - an[1]);
                }
                _ => {
                    let c = g.cell_center_px(ci, cj);
                    out.push(2.0 * (a - c[0]) / w);
                    out.push(2.0 * (b - c[1]) / h);
                }
            }
        }
        Ok(TlfFile {
            grid: g,
            frames: self.frames,
            convention: Convention::Offset,
            origin: self.convention,
            coords: Coords::F64(out),
            visibility: self.visibility.clone(),
        })
    }

    /// Absolute coordinates in `target`, or the offsets' origin convention when
    /// `None`. Converting back to the origin reproduces the original `f32` values.
    pub fn to_absolute(&self, target: Option<Convention>) -> Result<TlfFile> {
        self.validate()?;
        let target = target.unwrap_or(self.origin);
        if target == Convention::Offset {
            return Err(Error::Format(
                "absolute target must be pixel or normalized".into(),
            ));
        }
        if self.convention != Convention::Offset {
            return if target == self.convention {
                Ok(self.clone())
            } else {
                TlfFile::from_tracks(&self.to_tracks()?, target)
            };
        }
        let g = self.grid;
        let (w, h) = (g.width as f64, g.height as f64);
        let n = g.num_tracks();
        let mut out = Vec::with_capacity(self.coords.len());
        for i in 0..self.coords.len() / 2 {
            let k = i % n;
            let (ci, cj) = (k / g.cells_w(), k % g.cells_w());
            let (a, b) = (self.coords.get(2 * i), self.coords.get(2 * i + 1));
            match target {
                Convention::Normalized => {
                    let an = anchor32(&g, ci, cj);
                    out.push((a + an[0]) as f32);
                    out.push((b + an[1]) as f32);
                }
                _ => {
                    let c = g.cell_center_px(ci, cj);
                    out.push((a * w / 2.0 + c[0]) as f32);
                    out.push((b * h / 2.0 + c[1]) as f32);
                }
            }
        }
        Ok(TlfFile {
            grid: g,
            frames: self.frames,
            convention: target,
            origin: target,
            coords: Coords::F32(out),
            visibility: self.visibility.clone(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let g = self.grid;
        let width = match self.coords {
            Coords::F32(_) => 4u8,
            Coords::F64(_) => 8u8,
        };
        let mut b = Vec::with_capacity(
            HEADER_LEN + self.coords.len() * width as usize + self.visibility.len(),
        );
        b.extend_from_slice(MAGIC);
        for v in [
            VERSION as usize,
            self.frames,
            g.cells_h(),
            g.cells_w(),
            g.height,
            g.width,
            g.stride,
        ] {
            let v = u32::try_from(v)
                .map_err(|_| Error::Format(format!("header value {v} exceeds u32")))?;
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&[self.convention.code(), width, self.origin.code(), 0]);
        match &self.coords {
            Coords::F32(v) => v.iter().for_each(|x| b.extend_from_slice(&x.to_le_bytes())),
            Coords::F64(v) => v.iter().for_each(|x| b.extend_from_slice(&x.to_le_bytes())),
        }
        b.extend(self.visibility.iter().map(|&v| v as u8));
        Ok(b)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format("file shorter than the header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic, not a track file".into()));
        }
        let word = |i: usize| {
            u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
        };
        let version = word(0) as u32;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let (frames, hc, wc, h, w, s) = (word(1), word(2), word(3), word(4), word(5), word(6));
        let grid = GridSpec::new(h, w, s).map_err(|e| Error::Format(e.to_string()))?;
        if grid.cells_h() != hc || grid.cells_w() != wc {
            return Err(Error::Format(format!(
                "cell grid {hc}x{wc} disagrees with {h}x{w} at stride {s}"
            )));
        }
        let flags = &bytes[32..36];
        let convention = Convention::from_code(flags[0])?;
        let origin = Convention::from_code(flags[2])?;
        let width = flags[1] as usize;
        if flags[3] != 0 {
            return Err(Error::Format("reserved header byte must be zero".into()));
        }
        let count = frames
            .checked_mul(grid.num_tracks())
            .ok_or_else(|| Error::Format("track count overflows".into()))?;
        let expected = count
            .checked_mul(2 * width + 1)
            .and_then(|p| p.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::Format("payload size overflows".into()))?;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "payload length {} does not match header (expected {expected} bytes)",
                bytes.len()
            )));
        }
        let body = &bytes[HEADER_LEN..];
        let coords = match width {
            4 => Coords::F32(
                body[..count * 8]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            8 => Coords::F64(
                body[..count * 16]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            _ => {
                return Err(Error::Format(format!(
                    "unsupported coordinate width {width}"
                )))
            }
        };
        let vis_bytes = &body[count * 2 * width..];
        if vis_bytes.iter().any(|&v| v > 1) {
            return Err(Error::Format("visibility bytes must be 0 or 1".into()));
        }
        let file = TlfFile {
            grid,
            frames,
            convention,
            origin,
            coords,
            visibility: vis_bytes.iter().map(|&v| v == 1).collect(),
        };
        file.validate()?;
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}
