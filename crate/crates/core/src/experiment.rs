//! Seeded ablation runs: every seed builds one synthetic instance and every
//! variant is fitted on it.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Variant};
use crate::error::{Error, Result};
use crate::fitter::{fit_gauss_newton, predict_dense, BasisStack, FitResult};
use crate::grid::{DepthGrid, Grid};
use crate::metrics::{evaluate, MetricReport};
use crate::multiscale::{gather_rows, MultiScaleBases};
use crate::synth::{derive_seed, generate_bases, generate_scene, sample_sparse, Scene, SamplerConfig, SparseSample};

const SCENE_STREAM: u64 = 1;
const BASIS_STREAM: u64 = 2;
const SAMPLE_STREAM: u64 = 3;

/// One synthetic problem: scene, pyramid, full-resolution field and the
/// sparse samples with their basis rows.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    pub scene: Scene,
    pub bases: MultiScaleBases,
    /// Bias plane plus every upsampled level.
    pub field: Grid,
    pub sample: SparseSample,
    pub stack: BasisStack,
    pub w_true: Option<Vec<f64>>,
}

pub fn build_instance(cfg: &ExperimentConfig, seed: u64) -> Result<Instance> {
    let scene = generate_scene(&cfg.scene, &cfg.activation, derive_seed(seed, SCENE_STREAM))?;
    let (bases, w_true) = generate_bases(&scene, &cfg.channel_plan, cfg.basis_mode, derive_seed(seed, BASIS_STREAM))?;
    let sampler = SamplerConfig {
        seed: derive_seed(seed, SAMPLE_STREAM),
        ..cfg.sampler
    };
    let sample = sample_sparse(&scene, &sampler)?;
    let field = bases.dense_field()?;
    let stack = gather_rows(&field, sample.set.pixel_ids());
    Ok(Instance {
        seed,
        scene,
        bases,
        field,
        sample,
        stack,
        w_true,
    })
}

/// Fits one variant and predicts the dense depth.
pub fn run_variant(cfg: &ExperimentConfig, inst: &Instance, variant: Variant) -> Result<(FitResult, DepthGrid)> {
    let fit_cfg = variant.fit_config(&cfg.fit);
    let res = fit_gauss_newton(&inst.stack, &inst.sample.set, &cfg.activation, &fit_cfg)?;
    let dense = predict_dense(&inst.field, &res.weights, &cfg.activation)?;
    Ok((res, dense))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub seed: u64,
    pub variant: Variant,
    /// `ok` or the name of the error that stopped the run.
    pub status: String,
    pub report: Option<MetricReport>,
    pub n_samples: usize,
    /// Samples flagged by the outlier mask.
    pub n_flagged: usize,
    pub wall_ms: f64,
}

impl ExperimentRow {
    pub fn is_ok(&self) -> bool {
        self.report.is_some()
    }
}

/// Columns of `results.csv`. Stable; new columns are only ever appended.
pub const RESULTS_CSV_HEADER: &str =
    "seed,variant,status,mae,rmse,delta1,delta2,delta3,irmse,n_evaluated,depth_cap,n_samples,n_flagged";
pub const TIMINGS_CSV_HEADER: &str = "seed,variant,status,wall_ms";

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub delta1_mean: f64,
    pub delta1_std: f64,
    pub irmse_mean: f64,
    pub irmse_std: f64,
    pub wall_ms_mean: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// Sorted by seed, then by the variant's position in the config.
    pub rows: Vec<ExperimentRow>,
    pub variants: Vec<Variant>,
}

impl ExperimentOutput {
    /// Metrics only, so reruns are byte-identical.
    pub fn results_csv(&self) -> String {
        let mut out = String::from(RESULTS_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{},", r.seed, r.variant, r.status);
            match &r.report {
                Some(m) => {
                    let _ = write!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        m.mae, m.rmse, m.delta1, m.delta2, m.delta3, m.irmse, m.n_evaluated, m.depth_cap
                    );
                }
                None => out.push_str(",,,,,,,"),
            }
            let _ = writeln!(out, ",{},{}", r.n_samples, r.n_flagged);
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from(TIMINGS_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.3}", r.seed, r.variant, r.status, r.wall_ms);
        }
        out
    }

    pub fn summary(&self) -> Vec<VariantSummary> {
        self.variants
            .iter()
            .map(|v| {
                let rows: Vec<&ExperimentRow> = self.rows.iter().filter(|r| r.variant == *v).collect();
                let ok: Vec<&MetricReport> = rows.iter().filter_map(|r| r.report.as_ref()).collect();
                let stat = |f: fn(&MetricReport) -> f64| mean_std(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
                let (mae_mean, mae_std) = stat(|m| m.mae);
                let (rmse_mean, rmse_std) = stat(|m| m.rmse);
                let (delta1_mean, delta1_std) = stat(|m| m.delta1);
                let (irmse_mean, irmse_std) = stat(|m| m.irmse);
                VariantSummary {
                    variant: *v,
                    n_ok: ok.len(),
                    n_failed: rows.len() - ok.len(),
                    mae_mean,
                    mae_std,
                    rmse_mean,
                    rmse_std,
                    delta1_mean,
                    delta1_std,
                    irmse_mean,
                    irmse_std,
                    wall_ms_mean: mean_std(&rows.iter().map(|r| r.wall_ms).collect::<Vec<_>>()).0,
                }
            })
            .collect()
    }

    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(|r| !r.is_ok())
    }

    /// First error status, for exit-code triage when everything failed.
    pub fn first_error(&self) -> Option<&str> {
        self.rows.iter().find(|r| !r.is_ok()).map(|r| r.status.as_str())
    }

    pub fn row(&self, seed: u64, variant: Variant) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.seed == seed && r.variant == variant)
    }
}

/// Sample mean and standard deviation (n - 1); NaN mean when empty.
fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every (seed, variant) pair. Failures become rows with a non-`ok`
/// status; only config errors abort the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut rows: Vec<ExperimentRow> = cfg
        .seeds
        .par_iter()
        .flat_map_iter(|&seed| run_seed(cfg, seed))
        .collect();
    let order = |v: &Variant| cfg.variants.iter().position(|x| x == v).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (r.seed, order(&r.variant)));
    Ok(ExperimentOutput {
        rows,
        variants: cfg.variants.clone(),
    })
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Vec<ExperimentRow> {
    let inst = match build_instance(cfg, seed) {
        Ok(i) => i,
        Err(e) => return cfg.variants.iter().map(|v| failed_row(seed, *v, &e, 0)).collect(),
    };
    cfg.variants
        .iter()
        .map(|&variant| {
            let start = Instant::now();
            let outcome = run_variant(cfg, &inst, variant)
                .and_then(|(res, dense)| Ok((evaluate(&dense, &inst.scene.depth, cfg.depth_cap)?, res)));
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            match outcome {
                Ok((report, res)) => ExperimentRow {
                    seed,
                    variant,
                    status: "ok".into(),
                    report: Some(report),
                    n_samples: inst.sample.set.len(),
                    n_flagged: res.outlier_mask.iter().filter(|m| **m).count(),
                    wall_ms,
                },
                Err(e) => failed_row(seed, variant, &e, inst.sample.set.len()),
            }
        })
        .collect()
}

fn failed_row(seed: u64, variant: Variant, e: &Error, n_samples: usize) -> ExperimentRow {
    ExperimentRow {
        seed,
        variant,
        status: e.name().into(),
        report: None,
        n_samples,
        n_flagged: 0,
        wall_ms: 0.0,
    }
}
