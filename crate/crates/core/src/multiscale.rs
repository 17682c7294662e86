//! Multi-scale basis pyramids.
//!
//! Level `k` of a pyramid with levels `0..=K` has resolution
//! `H / 2^(K-k) × W / 2^(K-k)`: level 0 is the coarsest, level K is full
//! resolution. Every level is upsampled bilinearly (half-pixel centers) to
//! `H × W` and the channels are concatenated coarsest-first behind a bias
//! column, so the flat weight vector reads `[bias, level 0, ..., level K]`.

use crate::activation::DepthActivation;
use crate::error::{check_len, Error, Result};
use crate::fitter::{accumulate_logits, BasisStack};
use crate::grid::{DepthGrid, Grid};

#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleBases {
    height: usize,
    width: usize,
    levels: Vec<Grid>,
}

impl MultiScaleBases {
    pub fn new(height: usize, width: usize, levels: Vec<Grid>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidBasis("a pyramid needs at least one level".into()));
        }
        let k_max = levels.len() - 1;
        let step = 1usize
            .checked_shl(k_max as u32)
            .ok_or_else(|| Error::InvalidBasis(format!("{} levels is too many", levels.len())))?;
        if !height.is_multiple_of(step) || !width.is_multiple_of(step) {
            return Err(Error::InvalidBasis(format!(
                "{height}x{width} is not divisible by 2^{k_max}"
            )));
        }
        for (k, g) in levels.iter().enumerate() {
            let f = 1usize << (k_max - k);
            check_len("pyramid level height", height / f, g.height())?;
            check_len("pyramid level width", width / f, g.width())?;
            if g.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidBasis(format!("level {k} holds a non-finite value")));
            }
        }
        Ok(Self {
            height,
            width,
            levels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }

    /// Index of the finest level, `K`.
    pub fn max_scale(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn levels(&self) -> &[Grid] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> Result<&Grid> {
        self.levels.get(k).ok_or(Error::ScaleOutOfRange {
            scale: k,
            levels: self.levels.len(),
        })
    }

    pub fn channel_plan(&self) -> Vec<usize> {
        self.levels.iter().map(Grid::channels).collect()
    }

    /// Flat weight length, bias included.
    pub fn dim(&self) -> usize {
        1 + self.levels.iter().map(Grid::channels).sum::<usize>()
    }

    /// Full-resolution field with the bias plane first, then the upsampled
    /// channels of levels `0..=upto`.
    pub fn dense_field_upto(&self, upto: usize) -> Result<Grid> {
        self.check_scale(upto)?;
        let n = self.height * self.width;
        let channels = 1 + self.levels[..=upto].iter().map(Grid::channels).sum::<usize>();
        let mut data = Vec::with_capacity(n * channels);
        data.resize(n, 1.0);
        for g in &self.levels[..=upto] {
            data.extend(upsample_bilinear(g, self.height, self.width)?.into_vec());
        }
        Grid::new(self.height, self.width, channels, data)
    }

    pub fn dense_field(&self) -> Result<Grid> {
        self.dense_field_upto(self.max_scale())
    }

    fn check_scale(&self, s: usize) -> Result<()> {
        if s > self.max_scale() {
            Err(Error::ScaleOutOfRange {
                scale: s,
                levels: self.levels.len(),
            })
        } else {
            Ok(())
        }
    }
}

/// Weight vector split by pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleWeights {
    pub bias: f64,
    pub levels: Vec<Vec<f64>>,
}

impl ScaleWeights {
    pub fn from_flat(flat: &[f64], plan: &[usize]) -> Result<Self> {
        check_len("flat weights", 1 + plan.iter().sum::<usize>(), flat.len())?;
        let mut levels = Vec::with_capacity(plan.len());
        let mut at = 1;
        for &c in plan {
            levels.push(flat[at..at + c].to_vec());
            at += c;
        }
        Ok(Self {
            bias: flat[0],
            levels,
        })
    }

    pub fn zeros(plan: &[usize]) -> Self {
        Self {
            bias: 0.0,
            levels: plan.iter().map(|&c| vec![0.0; c]).collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = vec![self.bias];
        for l in &self.levels {
            out.extend_from_slice(l);
        }
        out
    }

    fn check_plan(&self, ms: &MultiScaleBases) -> Result<()> {
        check_len("weight levels", ms.levels.len(), self.levels.len())?;
        for (w, g) in self.levels.iter().zip(&ms.levels) {
            check_len("level weights", g.channels(), w.len())?;
        }
        Ok(())
    }
}

/// Bilinear resize with half-pixel centers. Target dims must be integer
/// multiples of the source dims.
pub fn upsample_bilinear(grid: &Grid, height: usize, width: usize) -> Result<Grid> {
    let (sh, sw) = (grid.height(), grid.width());
    if sh == 0 || sw == 0 || !height.is_multiple_of(sh) || !width.is_multiple_of(sw) {
        return Err(Error::DimensionMismatch {
            what: "upsample target (must be a multiple of the source)",
            expected: sh * sw,
            found: height * width,
        });
    }
    let ys = axis_taps(sh, height);
    let xs = axis_taps(sw, width);
    let mut data = Vec::with_capacity(height * width * grid.channels());
    for c in 0..grid.channels() {
        let plane = grid.plane(c);
        for ty in &ys {
            let r0 = &plane[ty.lo * sw..(ty.lo + 1) * sw];
            let r1 = &plane[ty.hi * sw..(ty.hi + 1) * sw];
            for tx in &xs {
                let top = (1.0 - tx.frac) * r0[tx.lo] + tx.frac * r0[tx.hi];
                let bot = (1.0 - tx.frac) * r1[tx.lo] + tx.frac * r1[tx.hi];
                data.push((1.0 - ty.frac) * top + ty.frac * bot);
            }
        }
    }
    Grid::new(height, width, grid.channels(), data)
}

struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            Tap {
                lo,
                hi: (lo + 1).min(src - 1),
                frac: pos - lo as f64,
            }
        })
        .collect()
}

/// Rows `[1, level 0 channels, ..., level K channels]` at the given pixels
/// (`id = y * W + x`).
pub fn flatten_to_stack(ms: &MultiScaleBases, pixel_ids: &[usize]) -> Result<BasisStack> {
    let n = ms.height * ms.width;
    if let Some(&p) = pixel_ids.iter().find(|&&p| p >= n) {
        return Err(Error::PixelOutOfRange {
            pixel: p,
            height: ms.height,
            width: ms.width,
        });
    }
    let field = ms.dense_field()?;
    Ok(gather_rows(&field, pixel_ids))
}

/// Full-resolution channels with a bias plane of ones put in front.
pub fn prepend_bias(channels: &Grid) -> Grid {
    let n = channels.pixels();
    let mut data = Vec::with_capacity(n * (channels.channels() + 1));
    data.resize(n, 1.0);
    data.extend_from_slice(channels.as_slice());
    Grid::new(channels.height(), channels.width(), channels.channels() + 1, data).expect("sizes agree")
}

/// Basis rows of a dense field (bias plane first) at the given pixels.
pub fn gather_stack(field: &Grid, pixel_ids: &[usize]) -> Result<BasisStack> {
    if let Some(&p) = pixel_ids.iter().find(|&&p| p >= field.pixels()) {
        return Err(Error::PixelOutOfRange {
            pixel: p,
            height: field.height(),
            width: field.width(),
        });
    }
    let st = gather_rows(field, pixel_ids);
    BasisStack::new(st.n_samples(), st.n_channels(), st.as_slice().to_vec())
}

pub(crate) fn gather_rows(field: &Grid, pixel_ids: &[usize]) -> BasisStack {
    let dim = field.channels();
    let mut rows = Vec::with_capacity(pixel_ids.len() * dim);
    for &p in pixel_ids {
        rows.extend((0..dim).map(|c| field.plane(c)[p]));
    }
    BasisStack::from_raw(pixel_ids.len(), dim, rows)
}

/// Logit field using the bias and levels `0..=s`.
pub fn logit_at_scale(ms: &MultiScaleBases, w: &ScaleWeights, s: usize) -> Result<Grid> {
    ms.check_scale(s)?;
    w.check_plan(ms)?;
    let field = ms.dense_field_upto(s)?;
    let flat: Vec<f64> = w.to_flat()[..field.channels()].to_vec();
    Grid::new(ms.height, ms.width, 1, accumulate_logits(&field, &flat))
}

/// Depth predicted from the bias and levels `0..=s`. At `s = K` this is
/// bit-identical to `predict_dense` on the full field.
pub fn reconstruct_at_scale(
    ms: &MultiScaleBases,
    w: &ScaleWeights,
    act: &DepthActivation,
    s: usize,
) -> Result<DepthGrid> {
    let logits = logit_at_scale(ms, w, s)?;
    let values = logits.as_slice().iter().map(|z| act.forward(*z)).collect();
    DepthGrid::from_values(ms.height, ms.width, values)
}

/// `w_kᵀ b_k` of one level alone (no bias) at full resolution.
pub fn level_contribution(ms: &MultiScaleBases, w: &ScaleWeights, k: usize) -> Result<Grid> {
    ms.check_scale(k)?;
    w.check_plan(ms)?;
    let up = upsample_bilinear(&ms.levels[k], ms.height, ms.width)?;
    Grid::new(ms.height, ms.width, 1, accumulate_logits(&up, &w.levels[k]))
}
