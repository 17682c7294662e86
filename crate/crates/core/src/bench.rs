//! Wall-clock timing of the fit variants: fit plus dense prediction on one
//! synthetic instance per case, median over repeated runs.

use std::time::Instant;

use serde::Serialize;

use crate::activation::DepthActivation;
use crate::config::{BenchCase, BenchConfig, Variant};
use crate::error::{Error, Result};
use crate::fitter::{fit_gauss_newton, predict_dense, FitConfig};
use crate::multiscale::gather_rows;
use crate::synth::{
    derive_seed, generate_bases, generate_scene, sample_sparse, BasisMode, SamplerConfig, SceneConfig, SceneKind,
};

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub height: usize,
    pub width: usize,
    pub samples: usize,
    /// Fitted dimension, bias included.
    pub dim: usize,
    pub variant: Variant,
    pub repeats: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

pub const BENCH_CSV_HEADER: &str = "height,width,samples,dim,variant,repeats,median_ms,min_ms,max_ms";

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.4},{:.4},{:.4}",
            self.height, self.width, self.samples, self.dim, self.variant, self.repeats, self.median_ms, self.min_ms, self.max_ms
        )
    }
}

/// One row per (case, variant), cases in config order.
pub fn run_bench(cfg: &BenchConfig, act: &DepthActivation, base: &FitConfig) -> Result<Vec<BenchRow>> {
    if cfg.repeats == 0 {
        return Err(Error::InvalidConfig("bench repeats must be > 0".into()));
    }
    let mut rows = Vec::with_capacity(cfg.cases.len() * cfg.variants.len());
    for (ci, case) in cfg.cases.iter().enumerate() {
        rows.extend(bench_case(cfg, ci as u64, case, act, base)?);
    }
    Ok(rows)
}

fn bench_case(cfg: &BenchConfig, index: u64, case: &BenchCase, act: &DepthActivation, base: &FitConfig) -> Result<Vec<BenchRow>> {
    let seed = derive_seed(cfg.seed, index);
    let scene_cfg = SceneConfig {
        height: case.height,
        width: case.width,
        kind: SceneKind::RandomSmooth,
        ..SceneConfig::default()
    };
    let scene = generate_scene(&scene_cfg, act, derive_seed(seed, 1))?;
    let (bases, _) = generate_bases(&scene, &case.channel_plan, BasisMode::Generic, derive_seed(seed, 2))?;
    let sampler = SamplerConfig {
        count: Some(case.samples),
        noise_sigma: 0.05,
        outlier_fraction: 0.3,
        seed: derive_seed(seed, 3),
        ..SamplerConfig::default()
    };
    let sample = sample_sparse(&scene, &sampler)?;
    let field = bases.dense_field()?;
    let stack = gather_rows(&field, sample.set.pixel_ids());

    let mut rows = Vec::with_capacity(cfg.variants.len());
    for &variant in &cfg.variants {
        let fit_cfg = variant.fit_config(base);
        let mut times = Vec::with_capacity(cfg.repeats);
        for _ in 0..cfg.repeats {
            let start = Instant::now();
            let res = fit_gauss_newton(&stack, &sample.set, act, &fit_cfg)?;
            let dense = predict_dense(&field, &res.weights, act)?;
            std::hint::black_box(dense);
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        times.sort_by(f64::total_cmp);
        rows.push(BenchRow {
            height: case.height,
            width: case.width,
            samples: sample.set.len(),
            dim: stack.dim(),
            variant,
            repeats: cfg.repeats,
            median_ms: times[times.len() / 2],
            min_ms: times[0],
            max_ms: times[times.len() - 1],
        });
    }
    Ok(rows)
}
