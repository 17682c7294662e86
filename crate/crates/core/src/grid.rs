//! Dense raster containers.

use crate::error::{check_len, Error, Result};

/// Multi-channel raster, channel-planar: entry `(c, y, x)` lives at
/// `c * height * width + y * width + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_len("grid payload", height * width * channels, data.len())?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Stacks single-plane buffers as channels.
    pub fn from_planes(height: usize, width: usize, planes: Vec<Vec<f64>>) -> Result<Self> {
        let channels = planes.len();
        let mut data = Vec::with_capacity(height * width * channels);
        for p in planes {
            check_len("grid plane", height * width, p.len())?;
            data.extend(p);
        }
        Self::new(height, width, channels, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[c * self.pixels() + y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let p = self.pixels();
        self.data[c * p + y * self.width + x] = v;
    }

    /// Contiguous slice holding one channel.
    pub fn plane(&self, c: usize) -> &[f64] {
        let p = self.pixels();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.pixels();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Single-channel depth map in meters with a per-pixel validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthGrid {
    /// Pixels are valid when their value is finite and positive.
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_len("depth grid", height * width, values.len())?;
        let valid = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        Ok(Self {
            height,
            width,
            values,
            valid,
        })
    }

    pub fn with_mask(height: usize, width: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        check_len("depth grid", height * width, values.len())?;
        check_len("depth mask", height * width, valid.len())?;
        Ok(Self {
            height,
            width,
            values,
            valid,
        })
    }

    /// Reads channel 0 of a grid.
    pub fn from_grid(grid: &Grid) -> Result<Self> {
        if grid.channels() != 1 {
            return Err(Error::DimensionMismatch {
                what: "depth grid channels",
                expected: 1,
                found: grid.channels(),
            });
        }
        Self::from_values(grid.height(), grid.width(), grid.plane(0).to_vec())
    }

    pub fn to_grid(&self) -> Grid {
        Grid::new(self.height, self.width, 1, self.values.clone()).expect("sizes agree")
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}
