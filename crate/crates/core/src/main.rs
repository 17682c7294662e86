use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod cli;

/// Least-squares depth fitting: fits, synthetic experiments, gradient checks
/// and timing runs.
#[derive(Debug, Parser)]
#[command(name = "basisfit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON to stdout.
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    /// Print CSV to stdout.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one set of sparse depths against a dense basis field.
    Fit {
        /// H x W x M basis field, bias excluded.
        #[arg(long)]
        bases: PathBuf,
        /// N x 1 x 3 sparse file: pixel id, depth, sigma.
        #[arg(long)]
        sparse: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Seeded ablation over fit variants.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Analytic gradients against central finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides both configured tolerances.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Median wall time per fit variant.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic scene, bases and sparse samples as grid files.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Metrics of a predicted depth file against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Evaluation cap in meters (defaults to the config's `depth_cap`).
        #[arg(long)]
        depth_cap: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let args = Cli::parse();
    if let Err(e) = cli::init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let outcome = match args.command {
        Command::Fit { bases, sparse, common } => cli::fit(&bases, &sparse, &common.into()),
        Command::Experiment { common, seed } => cli::experiment(&common.into(), seed),
        Command::Gradcheck { common, seed, tolerance } => cli::gradcheck(&common.into(), seed, tolerance),
        Command::Bench { common, seed } => cli::bench(&common.into(), seed),
        Command::Synth { common, seed } => cli::synth(&common.into(), seed),
        Command::Eval { pred, gt, depth_cap, common } => cli::eval(&pred, &gt, depth_cap, &common.into()),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e))
        }
    }
}

impl From<Common> for cli::Options {
    fn from(c: Common) -> Self {
        cli::Options {
            config: c.config,
            out: c.out,
            format: if c.json {
                cli::Format::Json
            } else if c.csv {
                cli::Format::Csv
            } else {
                cli::Format::Text
            },
        }
    }
}
