//! Least-squares fitting head.
//!
//! Given per-sample basis rows `b_i` (bias first) and sparse depths `s_i`,
//! the linear stage solves
//!
//! ```text
//! (λI + BᵀB) w = Bᵀt,    t_i = g⁻¹(s_i)
//! ```
//!
//! and the nonlinear stage then runs a fixed number of Gauss-Newton steps on
//! the depth-space residual `r_i = g(wᵀb_i) - s_i`:
//!
//! ```text
//! (λI + Σ ω_i J_i J_iᵀ) Δw = -Σ ω_i r_i J_i,   J_i = g'(wᵀb_i) b_i
//! ω_i = c_i / σ_i²,   c_i = min(1, δ / |r_i / σ_i|)   (c_i = 1 without Huber)
//! ```
//!
//! `c_i` is the Huber IRLS factor `ρ'/2`; the constant 2 cancels between
//! the two sides. There is no convergence test: exactly `iterations` steps
//! are taken.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::DepthActivation;
use crate::error::{check_len, Error, Result};
use crate::grid::{DepthGrid, Grid};
use crate::linalg::{cholesky, solve_spd, CholeskyFactor, SymMatrix};

/// Outlier threshold on the standardized residual.
pub const DEFAULT_HUBER_DELTA: f64 = 1.0;

/// `N × (M+1)` design matrix, row-major, column 0 fixed to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisStack {
    n_samples: usize,
    dim: usize,
    rows: Vec<f64>,
}

impl BasisStack {
    /// `rows` holds `n_samples * (n_channels + 1)` values; each row starts
    /// with the bias entry, which must be exactly `1.0`.
    pub fn new(n_samples: usize, n_channels: usize, rows: Vec<f64>) -> Result<Self> {
        let dim = n_channels + 1;
        check_len("basis rows", n_samples * dim, rows.len())?;
        for (i, row) in rows.chunks_exact(dim).enumerate() {
            if row[0] != 1.0 {
                return Err(Error::InvalidBasis(format!(
                    "bias column must be exactly 1.0, row {i} holds {}",
                    row[0]
                )));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidBasis(format!(
                    "non-finite entry at row {i}, column {j}"
                )));
            }
        }
        Ok(Self {
            n_samples,
            dim,
            rows,
        })
    }

    pub fn from_row_vecs(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(1, Vec::len);
        if dim == 0 {
            return Err(Error::InvalidBasis("rows must contain the bias entry".into()));
        }
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            check_len("basis row length", dim, r.len())?;
            flat.extend_from_slice(r);
        }
        Self::new(rows.len(), dim - 1, flat)
    }

    /// Skips validation; used by the finite-difference oracle, which has to
    /// perturb the bias column too.
    pub(crate) fn from_raw(n_samples: usize, dim: usize, rows: Vec<f64>) -> Self {
        debug_assert_eq!(rows.len(), n_samples * dim);
        Self {
            n_samples,
            dim,
            rows,
        }
    }

    #[inline]
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Number of basis channels, bias excluded.
    #[inline]
    pub fn n_channels(&self) -> usize {
        self.dim - 1
    }

    /// Length of a row, bias included.
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rows
    }

    /// `B w`.
    pub fn mul(&self, w: &[f64]) -> Vec<f64> {
        debug_assert_eq!(w.len(), self.dim);
        self.rows
            .chunks_exact(self.dim)
            .map(|row| dot(row, w))
            .collect()
    }

    /// `Bᵀ v`.
    pub fn t_mul(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.n_samples);
        let mut out = vec![0.0; self.dim];
        for (row, &vi) in self.rows.chunks_exact(self.dim).zip(v) {
            for (o, &b) in out.iter_mut().zip(row) {
                *o += vi * b;
            }
        }
        out
    }

    /// `λI + Σ h_i b_i b_iᵀ`, with `h_i = 1` when `row_weights` is `None`.
    pub(crate) fn weighted_normal_matrix(&self, lambda: f64, row_weights: Option<&[f64]>) -> SymMatrix {
        let p = self.dim;
        let mut acc = vec![0.0; p * p];
        for (i, row) in self.rows.chunks_exact(p).enumerate() {
            let h = row_weights.map_or(1.0, |w| w[i]);
            for j in 0..p {
                let hb = h * row[j];
                let dst = &mut acc[j * p + j..(j + 1) * p];
                for (d, &bk) in dst.iter_mut().zip(&row[j..]) {
                    *d += hb * bk;
                }
            }
        }
        let mut m = SymMatrix::mirror_upper(p, acc);
        m.add_diagonal(lambda);
        m
    }

    /// `λI + BᵀB`.
    pub fn normal_matrix(&self, lambda: f64) -> SymMatrix {
        self.weighted_normal_matrix(lambda, None)
    }

    pub fn select_rows(&self, idx: &[usize]) -> BasisStack {
        let mut rows = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            rows.extend_from_slice(self.row(i));
        }
        Self::from_raw(idx.len(), self.dim, rows)
    }
}

/// Sparse depth measurements paired row-for-row with a [`BasisStack`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthSet {
    pixel_ids: Vec<usize>,
    depths: Vec<f64>,
    sigmas: Vec<f64>,
}

impl SparseDepthSet {
    pub fn new(pixel_ids: Vec<usize>, depths: Vec<f64>, sigmas: Vec<f64>) -> Result<Self> {
        check_len("sparse depths", pixel_ids.len(), depths.len())?;
        check_len("sparse sigmas", pixel_ids.len(), sigmas.len())?;
        if let Some(&d) = depths.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::NonPositiveDepth { value: d });
        }
        if let Some(&s) = sigmas.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidSamples(format!("noise sigma {s} must be positive")));
        }
        Ok(Self {
            pixel_ids,
            depths,
            sigmas,
        })
    }

    pub fn with_uniform_sigma(pixel_ids: Vec<usize>, depths: Vec<f64>, sigma: f64) -> Result<Self> {
        let sigmas = vec![sigma; depths.len()];
        Self::new(pixel_ids, depths, sigmas)
    }

    pub(crate) fn from_raw(pixel_ids: Vec<usize>, depths: Vec<f64>, sigmas: Vec<f64>) -> Self {
        Self {
            pixel_ids,
            depths,
            sigmas,
        }
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }
    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }
    pub fn pixel_ids(&self) -> &[usize] {
        &self.pixel_ids
    }
    pub fn depths(&self) -> &[f64] {
        &self.depths
    }
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn select(&self, idx: &[usize]) -> SparseDepthSet {
        Self::from_raw(
            idx.iter().map(|&i| self.pixel_ids[i]).collect(),
            idx.iter().map(|&i| self.depths[i]).collect(),
            idx.iter().map(|&i| self.sigmas[i]).collect(),
        )
    }
}

/// Depths mapped to logit space through the activation inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub logits: Vec<f64>,
    /// `d logit / d depth` per sample, zero where clamped.
    pub slopes: Vec<f64>,
    pub clamped: Vec<bool>,
}

impl Targets {
    pub fn from_depths(depths: &[f64], act: &DepthActivation) -> Result<Self> {
        let mut t = Targets {
            logits: Vec::with_capacity(depths.len()),
            slopes: Vec::with_capacity(depths.len()),
            clamped: Vec::with_capacity(depths.len()),
        };
        for &s in depths {
            let inv = act.invert(s)?;
            t.logits.push(inv.logit);
            t.slopes.push(inv.slope);
            t.clamped.push(inv.clamped);
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Ridge regularization, reused in every Gauss-Newton system.
    pub lambda: f64,
    /// Gauss-Newton steps after the linear initialization; 0 is linear only.
    pub iterations: usize,
    /// Huber reweighting of the Gauss-Newton steps.
    pub robust: bool,
    pub huber_delta: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            iterations: 2,
            robust: true,
            huber_delta: DEFAULT_HUBER_DELTA,
        }
    }
}

impl FitConfig {
    pub fn linear(lambda: f64) -> Self {
        Self {
            lambda,
            iterations: 0,
            robust: false,
            huber_delta: DEFAULT_HUBER_DELTA,
        }
    }

    pub fn gauss_newton(lambda: f64, iterations: usize, robust: bool) -> Self {
        Self {
            lambda,
            iterations,
            robust,
            huber_delta: DEFAULT_HUBER_DELTA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda = {} must be >= 0", self.lambda)));
        }
        if !(self.huber_delta > 0.0) || !self.huber_delta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "huber_delta = {} must be > 0",
                self.huber_delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Fitted weights, bias first.
    pub weights: Vec<f64>,
    /// `g(wᵀb_i) - s_i` in meters.
    pub residuals_depth: Vec<f64>,
    /// Huber factor `min(1, δ/|u_i|)` of the final residuals.
    pub robust_weights: Vec<f64>,
    /// `|u_i| > δ`, with `u_i` the standardized residual.
    pub outlier_mask: Vec<bool>,
    /// Samples whose target was clamped before inversion.
    pub clamped: Vec<bool>,
    pub iterations_run: usize,
    /// `‖Δw‖₂` per Gauss-Newton step.
    pub weight_deltas: Vec<f64>,
}

impl FitResult {
    /// Root-mean-square depth residual over the fitted samples.
    pub fn depth_rms(&self) -> f64 {
        let n = self.residuals_depth.len().max(1) as f64;
        (self.residuals_depth.iter().map(|r| r * r).sum::<f64>() / n).sqrt()
    }
}

/// Huber IRLS factor `ρ'(u)/2`; the boundary `|u| == δ` counts as inlier.
#[inline]
pub fn huber_weight(u: f64, delta: f64) -> f64 {
    let a = u.abs();
    if a <= delta {
        1.0
    } else {
        delta / a
    }
}

/// Everything the unrolled backward pass needs from one Gauss-Newton step.
#[derive(Debug, Clone)]
pub(crate) struct GnStep {
    /// Weights the step was linearized at.
    pub weights: Vec<f64>,
    pub slopes: Vec<f64>,
    pub curvatures: Vec<f64>,
    pub residuals: Vec<f64>,
    pub standardized: Vec<f64>,
    pub robust: Vec<f64>,
    pub omega: Vec<f64>,
    pub factor: CholeskyFactor,
    /// `x` in `H x = q`; the update is `Δw = -x`.
    pub solution: Vec<f64>,
}

/// Forward record of a fit, consumed by [`crate::backward::backward_gn`].
#[derive(Debug, Clone)]
pub struct GnTape {
    pub(crate) basis: BasisStack,
    pub(crate) targets: Targets,
    pub(crate) sigmas: Vec<f64>,
    pub(crate) act: DepthActivation,
    pub(crate) cfg: FitConfig,
    pub(crate) init_weights: Vec<f64>,
    pub(crate) steps: Vec<GnStep>,
}

impl GnTape {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    pub fn config(&self) -> &FitConfig {
        &self.cfg
    }

    /// Smallest `||u_i| - δ|` over all recorded robust steps, `None` when no
    /// step used Huber reweighting.
    pub fn min_kink_distance(&self) -> Option<f64> {
        if !self.cfg.robust {
            return None;
        }
        self.steps
            .iter()
            .flat_map(|s| s.standardized.iter())
            .map(|u| (u.abs() - self.cfg.huber_delta).abs())
            .reduce(f64::min)
    }
}

fn check_pair(b: &BasisStack, s: &SparseDepthSet) -> Result<()> {
    if s.is_empty() || b.n_samples() == 0 {
        return Err(Error::EmptySparseSet);
    }
    check_len("sparse samples vs basis rows", b.n_samples(), s.len())
}

pub(crate) fn linear_solve(b: &BasisStack, logits: &[f64], lambda: f64) -> Result<(Vec<f64>, CholeskyFactor)> {
    let a = b.normal_matrix(lambda);
    let factor = cholesky(&a)?;
    let w = solve_spd(&factor, &b.t_mul(logits))?;
    Ok((w, factor))
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    b: &BasisStack,
    depths: &[f64],
    sigmas: &[f64],
    act: &DepthActivation,
    delta: f64,
    weights: Vec<f64>,
    clamped: Vec<bool>,
    weight_deltas: Vec<f64>,
) -> FitResult {
    let logits = b.mul(&weights);
    let residuals_depth: Vec<f64> = logits
        .iter()
        .zip(depths)
        .map(|(z, s)| act.forward(*z) - s)
        .collect();
    let u: Vec<f64> = residuals_depth.iter().zip(sigmas).map(|(r, s)| r / s).collect();
    FitResult {
        robust_weights: u.iter().map(|u| huber_weight(*u, delta)).collect(),
        outlier_mask: u.iter().map(|u| u.abs() > delta).collect(),
        residuals_depth,
        weights,
        clamped,
        iterations_run: weight_deltas.len(),
        weight_deltas,
    }
}

/// Ridge fit in logit space. Statistical weights are not used here.
pub fn fit_linear(
    b: &BasisStack,
    s: &SparseDepthSet,
    act: &DepthActivation,
    lambda: f64,
) -> Result<FitResult> {
    let cfg = FitConfig::linear(lambda);
    cfg.validate()?;
    check_pair(b, s)?;
    let targets = Targets::from_depths(s.depths(), act)?;
    let (w, _) = linear_solve(b, &targets.logits, lambda)?;
    Ok(summarize(
        b,
        s.depths(),
        s.sigmas(),
        act,
        cfg.huber_delta,
        w,
        targets.clamped,
        Vec::new(),
    ))
}

/// Linear initialization followed by exactly `cfg.iterations` Gauss-Newton
/// steps.
pub fn fit_gauss_newton(
    b: &BasisStack,
    s: &SparseDepthSet,
    act: &DepthActivation,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    check_pair(b, s)?;
    let targets = Targets::from_depths(s.depths(), act)?;
    fit_with_targets(b, &targets, s.depths(), s.sigmas(), act, cfg, false).map(|(r, _)| r)
}

/// [`fit_gauss_newton`] that also returns the tape for the backward pass.
pub fn fit_gauss_newton_taped(
    b: &BasisStack,
    s: &SparseDepthSet,
    act: &DepthActivation,
    cfg: &FitConfig,
) -> Result<(FitResult, GnTape)> {
    cfg.validate()?;
    check_pair(b, s)?;
    let targets = Targets::from_depths(s.depths(), act)?;
    let (res, tape) = fit_with_targets(b, &targets, s.depths(), s.sigmas(), act, cfg, true)?;
    Ok((res, tape.expect("tape requested")))
}

/// Forward pass with the logit targets (linear stage) decoupled from the
/// depths (residuals), so the two can be perturbed independently.
pub(crate) fn fit_with_targets(
    b: &BasisStack,
    targets: &Targets,
    depths: &[f64],
    sigmas: &[f64],
    act: &DepthActivation,
    cfg: &FitConfig,
    record: bool,
) -> Result<(FitResult, Option<GnTape>)> {
    let (mut w, _) = linear_solve(b, &targets.logits, cfg.lambda)?;
    let init_weights = if record { w.clone() } else { Vec::new() };
    let mut steps = Vec::new();
    let mut deltas = Vec::with_capacity(cfg.iterations);

    for _ in 0..cfg.iterations {
        let step = gauss_newton_step(b, depths, sigmas, act, cfg, &w)?;
        let mut norm2 = 0.0;
        for (wj, xj) in w.iter_mut().zip(&step.solution) {
            *wj -= xj;
            norm2 += xj * xj;
        }
        deltas.push(norm2.sqrt());
        if record {
            steps.push(step);
        }
    }

    let result = summarize(
        b,
        depths,
        sigmas,
        act,
        cfg.huber_delta,
        w,
        targets.clamped.clone(),
        deltas,
    );
    let tape = record.then(|| GnTape {
        basis: b.clone(),
        targets: targets.clone(),
        sigmas: sigmas.to_vec(),
        act: *act,
        cfg: *cfg,
        init_weights,
        steps,
    });
    Ok((result, tape))
}

fn gauss_newton_step(
    b: &BasisStack,
    depths: &[f64],
    sigmas: &[f64],
    act: &DepthActivation,
    cfg: &FitConfig,
    w: &[f64],
) -> Result<GnStep> {
    let n = b.n_samples();
    let logits = b.mul(w);
    let mut step = GnStep {
        weights: w.to_vec(),
        slopes: Vec::with_capacity(n),
        curvatures: Vec::with_capacity(n),
        residuals: Vec::with_capacity(n),
        standardized: Vec::with_capacity(n),
        robust: Vec::with_capacity(n),
        omega: Vec::with_capacity(n),
        factor: cholesky(&SymMatrix::identity(1))?,
        solution: Vec::new(),
    };
    let mut h = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n);
    for i in 0..n {
        let z = logits[i];
        let d = act.derivative(z);
        let r = act.forward(z) - depths[i];
        let u = r / sigmas[i];
        let c = if cfg.robust {
            huber_weight(u, cfg.huber_delta)
        } else {
            1.0
        };
        let omega = c / (sigmas[i] * sigmas[i]);
        h.push(omega * d * d);
        e.push(omega * r * d);
        step.slopes.push(d);
        step.curvatures.push(act.second_derivative(z));
        step.residuals.push(r);
        step.standardized.push(u);
        step.robust.push(c);
        step.omega.push(omega);
    }
    let normal = b.weighted_normal_matrix(cfg.lambda, Some(&h));
    step.factor = cholesky(&normal)?;
    step.solution = solve_spd(&step.factor, &b.t_mul(&e))?;
    Ok(step)
}

/// Returns `residuals_depth[i] / sigmas[i]`.
pub fn standardized_residuals(result: &FitResult, s: &SparseDepthSet) -> Result<Vec<f64>> {
    check_len("residuals vs samples", s.len(), result.residuals_depth.len())?;
    Ok(result
        .residuals_depth
        .iter()
        .zip(s.sigmas())
        .map(|(r, s)| r / s)
        .collect())
}

/// Per-pixel logits `wᵀb` of a dense basis field whose channel 0 is the bias.
pub fn predict_logits(field: &Grid, weights: &[f64]) -> Result<Grid> {
    check_len("weights vs basis channels", field.channels(), weights.len())?;
    if field.channels() == 0 || field.plane(0).iter().any(|v| *v != 1.0) {
        return Err(Error::InvalidBasis(
            "channel 0 of a dense basis field must be all ones".into(),
        ));
    }
    let out = accumulate_logits(field, weights);
    Grid::new(field.height(), field.width(), 1, out)
}

/// `Σ_c weights[c] · field[c]` per pixel, channels in order starting from
/// `0.0`. Only the first `weights.len()` channels are read; the multiscale
/// reconstruction relies on this fixed order for bit-exact agreement.
pub(crate) fn accumulate_logits(field: &Grid, weights: &[f64]) -> Vec<f64> {
    let (h, wd) = (field.height(), field.width());
    let mut out = vec![0.0; h * wd];
    out.par_chunks_mut(wd.max(1)).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let p = y * wd + x;
            let mut acc = 0.0;
            for (c, wc) in weights.iter().enumerate() {
                acc += wc * field.plane(c)[p];
            }
            *o = acc;
        }
    });
    out
}

/// Dense depth `g(wᵀb)` at every pixel.
pub fn predict_dense(field: &Grid, weights: &[f64], act: &DepthActivation) -> Result<DepthGrid> {
    let logits = predict_logits(field, weights)?;
    let values = logits.as_slice().iter().map(|z| act.forward(*z)).collect();
    DepthGrid::from_values(field.height(), field.width(), values)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
