//! Subcommand implementations. Each returns the process exit code on
//! success; errors map to 1 (input/config) or 2 (numerical).

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use basisfit::bench::{run_bench, BENCH_CSV_HEADER};
use basisfit::config::ExperimentConfig;
use basisfit::experiment::{build_instance, run_experiment};
use basisfit::gradcheck::run_gradcheck;
use basisfit::io::{read_grid, read_sparse, write_grid, write_sparse, Dtype};
use basisfit::multiscale::{gather_stack, prepend_bias};
use basisfit::{evaluate, fit_gauss_newton, predict_dense, DepthGrid, Error, Grid, MetricReport, Result};

/// Sigma assumed for sparse files without a sigma channel.
const DEFAULT_FILE_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Format,
}

impl Options {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
        fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        Ok(dir)
    }
}

pub fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

fn status_code(name: &str) -> u8 {
    match name {
        "NotPositiveDefinite" | "EmptySparseSet" | "KinkProximity" => 2,
        _ => 1,
    }
}

/// Caps the worker pool when `BASISFIT_THREADS` is set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("BASISFIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("BASISFIT_THREADS={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

pub fn fit(bases_path: &Path, sparse_path: &Path, opts: &Options) -> Result<u8> {
    let cfg = opts.load()?;
    let bases = read_grid(bases_path)?;
    if opts.config.is_some() && bases.channels() != cfg.basis_dim() - 1 {
        return Err(Error::DimensionMismatch {
            what: "basis file channels vs config channel_plan",
            expected: cfg.basis_dim() - 1,
            found: bases.channels(),
        });
    }
    let samples = read_sparse(sparse_path, DEFAULT_FILE_SIGMA)?;
    let field = prepend_bias(&bases);
    let stack = gather_stack(&field, samples.pixel_ids())?;
    let res = fit_gauss_newton(&stack, &samples, &cfg.activation, &cfg.fit)?;
    let dense = predict_dense(&field, &res.weights, &cfg.activation)?;

    let dir = opts.out_dir(&cfg)?;
    write_grid(dir.join("depth.dbf"), &dense.to_grid(), Dtype::F64)?;
    let mut mask = samples.pixel_ids().iter().map(|&p| p as f64).collect::<Vec<_>>();
    mask.extend(res.outlier_mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
    write_grid(dir.join("outlier_mask.dbf"), &Grid::new(samples.len(), 1, 2, mask)?, Dtype::F64)?;
    let n_flagged = res.outlier_mask.iter().filter(|m| **m).count();
    let summary = json!({
        "weights": res.weights,
        "iterations_run": res.iterations_run,
        "weight_deltas": res.weight_deltas,
        "n_samples": samples.len(),
        "n_flagged": n_flagged,
        "n_clamped": res.clamped.iter().filter(|c| **c).count(),
        "fit": cfg.fit,
    });
    write_text(&dir.join("weights.json"), &pretty(&summary))?;

    match opts.format {
        Format::Json => print!("{}", pretty(&summary)),
        _ => println!(
            "fitted {} weights on {} samples ({} iterations, {} flagged); wrote {}",
            res.weights.len(),
            samples.len(),
            res.iterations_run,
            n_flagged,
            dir.display()
        ),
    }
    Ok(0)
}

pub fn experiment(opts: &Options, seed: Option<u64>) -> Result<u8> {
    let mut cfg = opts.load()?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let out = run_experiment(&cfg)?;
    let dir = opts.out_dir(&cfg)?;
    let csv = out.results_csv();
    write_text(&dir.join("results.csv"), &csv)?;
    write_text(&dir.join("timings.csv"), &out.timings_csv())?;
    let summary = out.summary();
    write_text(&dir.join("summary.json"), &pretty(&summary))?;

    match opts.format {
        Format::Csv => print!("{csv}"),
        Format::Json => print!("{}", pretty(&summary)),
        Format::Text => {
            println!("{:<8} {:>5} {:>12} {:>12} {:>12} {:>9}", "variant", "ok", "mae", "rmse", "irmse", "delta1");
            for v in &summary {
                println!(
                    "{:<8} {:>5} {:>12.6} {:>12.6} {:>12.4} {:>9.3}",
                    v.variant.to_string(),
                    v.n_ok,
                    v.mae_mean,
                    v.rmse_mean,
                    v.irmse_mean,
                    v.delta1_mean
                );
            }
            println!("wrote {}", dir.display());
        }
    }
    if out.all_failed() {
        let name = out.first_error().unwrap_or("unknown");
        eprintln!("error: every run failed (first failure: {name})");
        return Ok(status_code(name));
    }
    Ok(0)
}

pub fn gradcheck(opts: &Options, seed: Option<u64>, tolerance: Option<f64>) -> Result<u8> {
    let mut cfg = opts.load()?;
    if let Some(s) = seed {
        cfg.gradcheck.seed = s;
    }
    let report = run_gradcheck(&cfg.gradcheck, tolerance)?;
    match opts.format {
        Format::Json => print!("{}", pretty(&report)),
        _ => {
            let line = |name: &str, e: &basisfit::gradcheck::ComponentErrors, tol: f64| {
                println!(
                    "{name:<12} basis {:.3e}  targets {:.3e}  depths {:.3e}  max {:.3e}  tol {tol:.1e}  {}",
                    e.basis,
                    e.targets,
                    e.depths,
                    e.max(),
                    if e.max() <= tol { "pass" } else { "FAIL" }
                )
            };
            line("linear", &report.linear, report.tolerance_linear);
            if let Some(gn) = &report.gauss_newton {
                line("gauss-newton", gn, report.tolerance_gn);
            }
            println!(
                "{} instances, {} redrawn for kink proximity: {}",
                report.instances,
                report.redraws,
                if report.passed { "PASS" } else { "FAIL" }
            );
        }
    }
    Ok(if report.passed { 0 } else { 2 })
}

pub fn bench(opts: &Options, seed: Option<u64>) -> Result<u8> {
    let mut cfg = opts.load()?;
    if let Some(s) = seed {
        cfg.bench.seed = s;
    }
    let rows = run_bench(&cfg.bench, &cfg.activation, &cfg.fit)?;
    let dir = opts.out_dir(&cfg)?;
    let mut csv = String::from(BENCH_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    write_text(&dir.join("bench.csv"), &csv)?;
    match opts.format {
        Format::Json => print!("{}", pretty(&rows)),
        _ => print!("{csv}"),
    }
    Ok(0)
}

pub fn synth(opts: &Options, seed: u64) -> Result<u8> {
    let cfg = opts.load()?;
    let inst = build_instance(&cfg, seed)?;
    let dir = opts.out_dir(&cfg)?;

    write_grid(dir.join("gt_depth.dbf"), &inst.scene.depth.to_grid(), Dtype::F64)?;
    let field = &inst.field;
    let channels = Grid::new(
        field.height(),
        field.width(),
        field.channels() - 1,
        field.as_slice()[field.pixels()..].to_vec(),
    )?;
    write_grid(dir.join("bases.dbf"), &channels, Dtype::F64)?;
    for (k, level) in inst.bases.levels().iter().enumerate() {
        write_grid(dir.join(format!("bases_level{k}.dbf")), level, Dtype::F64)?;
    }
    write_sparse(dir.join("sparse.dbf"), &inst.sample.set)?;
    let n = inst.sample.set.len();
    let mut truth: Vec<f64> = inst.sample.set.pixel_ids().iter().map(|&p| p as f64).collect();
    truth.extend(inst.sample.is_outlier.iter().map(|&o| if o { 1.0 } else { 0.0 }));
    truth.extend_from_slice(&inst.sample.clean_depth);
    write_grid(dir.join("sparse_truth.dbf"), &Grid::new(n, 1, 3, truth)?, Dtype::F64)?;
    if let Some(w) = &inst.w_true {
        write_text(&dir.join("w_true.json"), &pretty(w))?;
    }
    write_text(&dir.join("config.json"), &pretty(&cfg))?;
    if opts.format != Format::Json {
        println!(
            "scene {}x{}, {} basis channels, {} samples ({} outliers); wrote {}",
            field.height(),
            field.width(),
            field.channels() - 1,
            n,
            inst.sample.n_outliers(),
            dir.display()
        );
    } else {
        print!("{}", pretty(&json!({"samples": n, "outliers": inst.sample.n_outliers(), "dir": dir})));
    }
    Ok(0)
}

pub fn eval(pred: &Path, gt: &Path, depth_cap: Option<f64>, opts: &Options) -> Result<u8> {
    let cfg = opts.load()?;
    let pred = DepthGrid::from_grid(&read_grid(pred)?)?;
    let gt = DepthGrid::from_grid(&read_grid(gt)?)?;
    let report = evaluate(&pred, &gt, depth_cap.unwrap_or(cfg.depth_cap))?;
    match opts.format {
        Format::Csv => println!("{}\n{}", MetricReport::CSV_HEADER, report.csv_fields()),
        _ => print!("{}", pretty(&report)),
    }
    Ok(0)
}
