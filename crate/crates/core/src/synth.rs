//! Seeded synthetic scenes, basis pyramids and sparse depth samples.
//!
//! Every generator is a pure function of its parameters and seed
//! (ChaCha8 streams). Scenes are built in logit space and pushed through
//! the activation, so `logit == act.inverse(depth)` without clamping.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activation::{ActivationKind, DepthActivation};
use crate::backward::FitProblem;
use crate::error::{Error, Result};
use crate::fitter::{fit_gauss_newton_taped, BasisStack, FitConfig, SparseDepthSet};
use crate::grid::{DepthGrid, Grid};
use crate::multiscale::MultiScaleBases;

/// Sigma assigned to samples drawn without noise.
pub const CLEAN_SIGMA: f64 = 1.0;
/// Smallest depth a corrupted sample may take.
pub const MIN_SAMPLE_DEPTH: f64 = 1e-6;
const MAX_REDRAWS: u64 = 16;

/// SplitMix64 finalizer; decorrelates seeds of derived streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Voronoi regions of planar logit ramps plus Gaussian bumps.
    PlanesAndBumps,
    /// Sum of a few low-frequency cosines.
    RandomSmooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub kind: SceneKind,
    /// Upper bound on every scene depth, meters.
    pub depth_cap: f64,
    /// Scale of the Gaussian bumps relative to the plane ramps; 0 leaves a
    /// piecewise-planar logit field.
    pub bump_amplitude: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            kind: SceneKind::PlanesAndBumps,
            depth_cap: 80.0,
            bump_amplitude: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub depth: DepthGrid,
    pub logit: Grid,
    pub seed: u64,
    pub kind: SceneKind,
    /// Plane index per pixel for `PlanesAndBumps`, empty otherwise.
    pub regions: Vec<u8>,
}

pub fn generate_scene(cfg: &SceneConfig, act: &DepthActivation, seed: u64) -> Result<Scene> {
    act.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    if h == 0 || w == 0 {
        return Err(Error::InvalidConfig("scene dimensions must be positive".into()));
    }
    // depth band the scene is drawn in
    let lo_depth = (2.0 * act.a).max(0.02 * cfg.depth_cap);
    let hi_depth = 0.75 * cfg.depth_cap;
    if !(hi_depth > lo_depth) {
        return Err(Error::CapViolation(format!(
            "depth cap {} leaves no room above the activation floor {}",
            cfg.depth_cap, act.a
        )));
    }
    let (x_a, x_b) = (act.inverse(lo_depth)?, act.inverse(hi_depth)?);
    let (x_lo, x_hi) = (x_a.min(x_b), x_a.max(x_b));

    for attempt in 0..MAX_REDRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt));
        let (raw, regions) = match cfg.kind {
            SceneKind::PlanesAndBumps => planes_and_bumps(h, w, cfg.bump_amplitude, &mut rng),
            SceneKind::RandomSmooth => (random_smooth(h, w, &mut rng), Vec::new()),
        };
        let (min, max) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        if !(max - min > 1e-9) {
            continue;
        }
        // a random sub-band covering at least half of the admissible range
        let span = (x_hi - x_lo) * rng.random_range(0.5..1.0);
        let start = x_lo + rng.random_range(0.0..1.0) * (x_hi - x_lo - span);
        let logit: Vec<f64> = raw.iter().map(|v| start + span * (v - min) / (max - min)).collect();
        let depth: Vec<f64> = logit.iter().map(|x| act.forward(*x)).collect();
        let ok = depth.iter().zip(&logit).all(|(d, x)| {
            *d > act.a && *d <= cfg.depth_cap && act.invert(*d).is_ok_and(|inv| !inv.clamped && inv.logit.is_finite()) && x.is_finite()
        });
        if ok {
            return Ok(Scene {
                depth: DepthGrid::from_values(h, w, depth)?,
                logit: Grid::new(h, w, 1, logit)?,
                seed,
                kind: cfg.kind,
                regions,
            });
        }
    }
    Err(Error::CapViolation(format!(
        "no scene within (a, {}] after {MAX_REDRAWS} draws",
        cfg.depth_cap
    )))
}

fn planes_and_bumps(h: usize, w: usize, bump_amplitude: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n_planes = rng.random_range(2..=5usize);
    let planes: Vec<[f64; 5]> = (0..n_planes)
        .map(|_| {
            [
                rng.random_range(0.0..1.0), // seed y
                rng.random_range(0.0..1.0), // seed x
                rng.random_range(-0.5..0.5),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    let n_bumps = rng.random_range(1..=4usize);
    let bumps: Vec<[f64; 4]> = (0..n_bumps)
        .map(|_| {
            [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.05..0.2),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect();

    let mut raw = Vec::with_capacity(h * w);
    let mut regions = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            let fx = (x as f64 + 0.5) / w as f64;
            let (k, _) = planes
                .iter()
                .map(|p| (p[0] - fy).powi(2) + (p[1] - fx).powi(2))
                .enumerate()
                .fold((0, f64::INFINITY), |best, (k, d)| if d < best.1 { (k, d) } else { best });
            let p = &planes[k];
            let mut v = p[2] + p[3] * fy + p[4] * fx;
            if bump_amplitude != 0.0 {
                for b in &bumps {
                    let r2 = (b[0] - fy).powi(2) + (b[1] - fx).powi(2);
                    v += bump_amplitude * b[3] * (-r2 / (2.0 * b[2] * b[2])).exp();
                }
            }
            raw.push(v);
            regions.push(k as u8);
        }
    }
    (raw, regions)
}

fn random_smooth(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    cosine_field(h, w, 6, 3.0, rng)
}

/// Sum of `terms` random plane waves with at most `max_freq` cycles across
/// the field.
fn cosine_field(h: usize, w: usize, terms: usize, max_freq: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let waves: Vec<[f64; 4]> = (0..terms)
        .map(|_| {
            let amp: f64 = StandardNormal.sample(rng);
            [
                rng.random_range(-max_freq..=max_freq),
                rng.random_range(-max_freq..=max_freq),
                rng.random_range(0.0..std::f64::consts::TAU),
                amp / (terms as f64).sqrt(),
            ]
        })
        .collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            let fx = (x as f64 + 0.5) / w as f64;
            let v = waves
                .iter()
                .map(|c| c[3] * (std::f64::consts::TAU * (c[0] * fy + c[1] * fx) + c[2]).cos())
                .sum();
            out.push(v);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisMode {
    /// One finest-level channel carries the scene, so an exact fit exists.
    Realizable,
    Generic,
}

/// Smooth random pyramid for `scene`. In `Realizable` mode the first
/// channel of the finest level is `scene.logit - mean` and the returned
/// weights reproduce the scene.
pub fn generate_bases(
    scene: &Scene,
    channel_plan: &[usize],
    mode: BasisMode,
    seed: u64,
) -> Result<(MultiScaleBases, Option<Vec<f64>>)> {
    if channel_plan.is_empty() {
        return Err(Error::InvalidConfig("channel plan is empty".into()));
    }
    let (h, w) = (scene.logit.height(), scene.logit.width());
    let k_max = channel_plan.len() - 1;
    let step = 1usize << k_max;
    if h % step != 0 || w % step != 0 {
        return Err(Error::DimensionMismatch {
            what: "scene size must be divisible by 2^K",
            expected: step,
            found: if h % step != 0 { h } else { w },
        });
    }
    if mode == BasisMode::Realizable && channel_plan[k_max] == 0 {
        return Err(Error::InvalidConfig("realizable bases need a finest-level channel".into()));
    }

    let mut levels = Vec::with_capacity(channel_plan.len());
    for (k, &c) in channel_plan.iter().enumerate() {
        let f = 1usize << (k_max - k);
        let (hk, wk) = (h / f, w / f);
        let max_freq = ((hk.min(wk) as f64) / 4.0).max(1.0);
        let mut planes = Vec::with_capacity(c);
        for ch in 0..c {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ((k as u64) << 32) | ch as u64));
            planes.push(cosine_field(hk, wk, 6, max_freq, &mut rng));
        }
        levels.push(Grid::from_planes(hk, wk, planes)?);
    }

    let w_true = if mode == BasisMode::Realizable {
        let logit = scene.logit.plane(0);
        let mean = logit.iter().sum::<f64>() / logit.len() as f64;
        let finest = &mut levels[k_max];
        for (dst, src) in finest.plane_mut(0).iter_mut().zip(logit) {
            *dst = src - mean;
        }
        let dim = 1 + channel_plan.iter().sum::<usize>();
        let mut wt = vec![0.0; dim];
        wt[0] = mean;
        wt[1 + channel_plan[..k_max].iter().sum::<usize>()] = 1.0;
        Some(wt)
    } else {
        None
    };
    Ok((MultiScaleBases::new(h, w, levels)?, w_true))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Fraction of all pixels to sample.
    pub density: f64,
    /// Exact sample count, overriding `density`.
    pub count: Option<usize>,
    /// Only pixels at or below this depth are eligible, meters.
    pub depth_cap: f64,
    /// Additive Gaussian noise, meters; 0 is clean.
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    /// Multiplicative corruption interval for outliers.
    pub outlier_range: (f64, f64),
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            density: 0.04,
            count: None,
            depth_cap: 130.0,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            outlier_range: (0.5, 1.5),
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count.is_none() && !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidConfig(format!("density {} not in (0, 1]", self.density)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("noise_sigma {} must be >= 0", self.noise_sigma)));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(Error::InvalidConfig(format!(
                "outlier_fraction {} not in [0, 1]",
                self.outlier_fraction
            )));
        }
        let (lo, hi) = self.outlier_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("outlier_range ({lo}, {hi}) is invalid")));
        }
        Ok(())
    }

    /// Number of samples requested on an `h × w` image.
    pub fn sample_count(&self, h: usize, w: usize) -> usize {
        self.count
            .unwrap_or_else(|| (self.density * (h * w) as f64).floor() as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSample {
    pub set: SparseDepthSet,
    pub is_outlier: Vec<bool>,
    pub clean_depth: Vec<f64>,
}

impl SparseSample {
    pub fn n_outliers(&self) -> usize {
        self.is_outlier.iter().filter(|o| **o).count()
    }
}

fn sample_sigma(noise_sigma: f64) -> f64 {
    if noise_sigma > 0.0 {
        noise_sigma
    } else {
        CLEAN_SIGMA
    }
}

/// Uniform sampling without replacement among pixels with depth within the
/// cap, then Gaussian noise and multiplicative outliers. Outliers replace
/// the clean depth and receive no extra noise. Pixel ids come out sorted.
pub fn sample_sparse(scene: &Scene, cfg: &SamplerConfig) -> Result<SparseSample> {
    cfg.validate()?;
    let (h, w) = (scene.depth.height(), scene.depth.width());
    let eligible: Vec<usize> = (0..h * w)
        .filter(|&p| scene.depth.valid()[p] && scene.depth.values()[p] <= cfg.depth_cap)
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoEligiblePixels);
    }
    let n = cfg.sample_count(h, w).min(eligible.len());
    if n == 0 {
        return Err(Error::InvalidConfig(format!(
            "density {} yields no samples on a {h}x{w} image",
            cfg.density
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pixel_ids: Vec<usize> = index::sample(&mut rng, eligible.len(), n)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    pixel_ids.sort_unstable();
    let clean_depth: Vec<f64> = pixel_ids.iter().map(|&p| scene.depth.values()[p]).collect();

    let mut depths = clean_depth.clone();
    if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
        for d in &mut depths {
            *d += noise.sample(&mut rng);
        }
    }
    let n_out = (cfg.outlier_fraction * n as f64).floor() as usize;
    let mut is_outlier = vec![false; n];
    let (lo, hi) = cfg.outlier_range;
    for i in index::sample(&mut rng, n, n_out) {
        let factor = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        depths[i] = clean_depth[i] * factor;
        is_outlier[i] = true;
    }
    for d in &mut depths {
        *d = d.max(MIN_SAMPLE_DEPTH);
    }
    let sigma = sample_sigma(cfg.noise_sigma);
    Ok(SparseSample {
        set: SparseDepthSet::with_uniform_sigma(pixel_ids, depths, sigma)?,
        is_outlier,
        clean_depth,
    })
}

/// Shape of a random dense fitting problem for gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemSpec {
    pub n_samples: usize,
    pub n_channels: usize,
    pub activation: DepthActivation,
    pub fit: FitConfig,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    /// Redraw until every standardized residual is at least this far from
    /// the Huber threshold.
    pub kink_margin: f64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            n_samples: 40,
            n_channels: 8,
            activation: DepthActivation::default(),
            fit: FitConfig::gauss_newton(1e-3, 2, true),
            noise_sigma: 0.05,
            outlier_fraction: 0.3,
            kink_margin: 1e-3,
        }
    }
}

/// Random basis rows with depths from a random weight vector plus noise
/// and outliers, redrawn until no residual sits near a kink.
pub fn random_fit_problem(spec: &ProblemSpec, seed: u64) -> Result<FitProblem> {
    spec.activation.validate()?;
    spec.fit.validate()?;
    let (n, m) = (spec.n_samples, spec.n_channels);
    if n == 0 {
        return Err(Error::EmptySparseSet);
    }
    let relu = spec.activation.kind == ActivationKind::ReluOffset;
    for attempt in 0..64u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt));
        let mut rows = Vec::with_capacity(n * (m + 1));
        for _ in 0..n {
            rows.push(1.0);
            rows.extend((0..m).map(|_| rng.random_range(-1.0..1.0)));
        }
        let basis = BasisStack::new(n, m, rows)?;
        let mut w = vec![if relu { 3.0 } else { -1.0 }];
        let spread = 1.0 / (m.max(1) as f64).sqrt();
        w.extend((0..m).map(|_| rng.random_range(-spread..spread)));

        let clean: Vec<f64> = basis.mul(&w).iter().map(|z| spec.activation.forward(*z)).collect();
        let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut depths: Vec<f64> = clean.iter().map(|d| d + noise.sample(&mut rng)).collect();
        let n_out = (spec.outlier_fraction * n as f64).floor() as usize;
        for i in index::sample(&mut rng, n, n_out.min(n)) {
            depths[i] = clean[i] * rng.random_range(0.5..1.5);
        }
        for d in &mut depths {
            *d = d.max(spec.activation.clamp_floor() * 1.01).max(MIN_SAMPLE_DEPTH);
        }
        let samples = SparseDepthSet::with_uniform_sigma((0..n).collect(), depths, sample_sigma(spec.noise_sigma))?;

        let (_, tape) = fit_gauss_newton_taped(&basis, &samples, &spec.activation, &spec.fit)?;
        if tape.min_kink_distance().is_some_and(|d| d < spec.kink_margin) {
            continue;
        }
        if relu && !relu_clear_of_kink(&basis, &tape, spec.kink_margin) {
            continue;
        }
        return Ok(FitProblem {
            basis,
            samples,
            act: spec.activation,
            cfg: spec.fit,
        });
    }
    Err(Error::KinkProximity {
        iteration: 0,
        sample: 0,
        margin: 0.0,
    })
}

fn relu_clear_of_kink(b: &BasisStack, tape: &crate::fitter::GnTape, margin: f64) -> bool {
    tape.steps
        .iter()
        .all(|s| b.mul(&s.weights).iter().all(|z| z.abs() >= margin))
}
