//! `DBF1` grid files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "DBF1"
//! 4       4     height   u32
//! 8       4     width    u32
//! 12      4     channels u32
//! 16      1     dtype    u8, 0 = f32, 1 = f64
//! 17      ...   payload, channel-planar then row-major
//! ```
//!
//! The payload must fill the file exactly and hold finite values only.
//! Sparse sample sets are stored as `N × 1 × 3` grids with channels
//! `[pixel_id, depth, sigma]` (or `N × 1 × 2` without sigmas).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fitter::SparseDepthSet;
use crate::grid::Grid;

pub const MAGIC: &[u8; 4] = b"DBF1";
pub const HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            c => Err(Error::Format(format!("unknown dtype code {c}"))),
        }
    }
}

fn dim_u32(what: &str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

pub fn encode_grid(grid: &Grid, dtype: Dtype) -> Result<Vec<u8>> {
    if let Some(i) = grid.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::Format(format!("refusing to write non-finite value at index {i}")));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + grid.as_slice().len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&dim_u32("height", grid.height())?.to_le_bytes());
    out.extend_from_slice(&dim_u32("width", grid.width())?.to_le_bytes());
    out.extend_from_slice(&dim_u32("channels", grid.channels())?.to_le_bytes());
    out.push(dtype as u8);
    match dtype {
        Dtype::F32 => {
            for v in grid.as_slice() {
                let f = *v as f32;
                if !f.is_finite() {
                    return Err(Error::Format(format!("value {v} overflows f32")));
                }
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        Dtype::F64 => {
            for v in grid.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<(Grid, Dtype)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header (no room for a payload length check)",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected \"DBF1\"", &bytes[..4])));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (h, w, c) = (u32_at(4), u32_at(8), u32_at(12));
    let dtype = Dtype::from_code(bytes[16])?;
    let payload = &bytes[HEADER_LEN..];
    let expected = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .and_then(|v| v.checked_mul(dtype.size()))
        .ok_or_else(|| Error::Format(format!("header dims {h}x{w}x{c} overflow")))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload length {} bytes does not match {h}x{w}x{c} {:?} ({expected} bytes)",
            payload.len(),
            dtype
        )));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect(),
    };
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format(format!("non-finite value at payload index {i}")));
    }
    Ok((Grid::new(h, w, c, data)?, dtype))
}

pub fn write_grid(path: impl AsRef<Path>, grid: &Grid, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_grid(grid, dtype)?;
    fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    decode_grid(&bytes)
        .map(|(g, _)| g)
        .map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
}

pub fn sparse_to_grid(set: &SparseDepthSet) -> Grid {
    let mut data: Vec<f64> = set.pixel_ids().iter().map(|&p| p as f64).collect();
    data.extend_from_slice(set.depths());
    data.extend_from_slice(set.sigmas());
    Grid::new(set.len(), 1, 3, data).expect("sizes agree")
}

/// Reads `[pixel_id, depth]` or `[pixel_id, depth, sigma]` channels;
/// `default_sigma` fills in when the file has no sigma channel.
pub fn sparse_from_grid(grid: &Grid, default_sigma: f64) -> Result<SparseDepthSet> {
    if grid.width() != 1 || !(grid.channels() == 2 || grid.channels() == 3) {
        return Err(Error::Format(format!(
            "sparse file must be N x 1 x 2 or N x 1 x 3, found {}x{}x{}",
            grid.height(),
            grid.width(),
            grid.channels()
        )));
    }
    let ids = grid
        .plane(0)
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(53) {
                Ok(v as usize)
            } else {
                Err(Error::Format(format!("pixel id {v} is not a non-negative integer")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let depths = grid.plane(1).to_vec();
    let sigmas = if grid.channels() == 3 {
        grid.plane(2).to_vec()
    } else {
        vec![default_sigma; ids.len()]
    };
    SparseDepthSet::new(ids, depths, sigmas)
}

pub fn write_sparse(path: impl AsRef<Path>, set: &SparseDepthSet) -> Result<()> {
    write_grid(path, &sparse_to_grid(set), Dtype::F64)
}

pub fn read_sparse(path: impl AsRef<Path>, default_sigma: f64) -> Result<SparseDepthSet> {
    sparse_from_grid(&read_grid(path)?, default_sigma)
}
