//! JSON experiment configuration. Every field has a default, so `{}` is a
//! valid config.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activation::DepthActivation;
use crate::error::{Error, Result};
use crate::fitter::FitConfig;
use crate::synth::{BasisMode, ProblemSpec, SamplerConfig, SceneConfig};

/// Fit variant tag: `lsf` (linear), `lsfK` (K plain Gauss-Newton steps) or
/// `lsfK+` (K Huber-reweighted steps).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Variant {
    pub iterations: usize,
    pub robust: bool,
}

impl Variant {
    pub const LINEAR: Variant = Variant {
        iterations: 0,
        robust: false,
    };

    pub fn fit_config(&self, base: &FitConfig) -> FitConfig {
        FitConfig {
            iterations: self.iterations,
            robust: self.robust,
            ..*base
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.iterations, self.robust) {
            (0, _) => write!(f, "lsf"),
            (k, false) => write!(f, "lsf{k}"),
            (k, true) => write!(f, "lsf{k}+"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown variant {s:?}, expected lsf, lsfK or lsfK+"));
        let rest = s.strip_prefix("lsf").ok_or_else(bad)?;
        let (digits, robust) = match rest.strip_suffix('+') {
            Some(d) => (d, true),
            None => (rest, false),
        };
        if digits.is_empty() {
            return if robust { Err(bad()) } else { Ok(Variant::LINEAR) };
        }
        let iterations: usize = digits.parse().map_err(|_| bad())?;
        if iterations == 0 {
            return Err(bad());
        }
        Ok(Variant { iterations, robust })
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "results".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub problem: ProblemSpec,
    pub step: f64,
    pub tolerance_linear: f64,
    pub tolerance_gn: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            problem: ProblemSpec::default(),
            step: 1e-6,
            tolerance_linear: 1e-5,
            tolerance_gn: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchCase {
    pub height: usize,
    pub width: usize,
    pub samples: usize,
    pub channel_plan: Vec<usize>,
}

impl Default for BenchCase {
    fn default() -> Self {
        Self {
            height: 512,
            width: 512,
            samples: 1024,
            channel_plan: vec![4, 8, 16, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub cases: Vec<BenchCase>,
    pub variants: Vec<Variant>,
    /// Timed runs per (case, variant); the median is reported.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            cases: vec![BenchCase::default()],
            variants: default_variants(),
            repeats: 21,
            seed: 0,
        }
    }
}

fn default_variants() -> Vec<Variant> {
    ["lsf", "lsf2", "lsf2+"].iter().map(|s| s.parse().expect("valid tag")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    /// Channels per pyramid level, coarsest first.
    pub channel_plan: Vec<usize>,
    pub basis_mode: BasisMode,
    /// `sampler.seed` is ignored by experiments; each run derives it.
    pub sampler: SamplerConfig,
    pub activation: DepthActivation,
    /// Base fit settings; variants override `iterations` and `robust`.
    pub fit: FitConfig,
    pub variants: Vec<Variant>,
    /// Evaluation cap, meters.
    pub depth_cap: f64,
    pub seeds: Vec<u64>,
    pub output: OutputConfig,
    pub gradcheck: GradcheckConfig,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            channel_plan: vec![4, 8, 16, 32],
            basis_mode: BasisMode::Realizable,
            sampler: SamplerConfig::default(),
            activation: DepthActivation::default(),
            fit: FitConfig::default(),
            variants: default_variants(),
            depth_cap: 80.0,
            seeds: (0..10).collect(),
            output: OutputConfig::default(),
            gradcheck: GradcheckConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.activation.validate()?;
        self.fit.validate()?;
        self.sampler.validate()?;
        if self.channel_plan.is_empty() {
            return Err(Error::InvalidConfig("channel_plan is empty".into()));
        }
        let mut seen = HashSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::InvalidConfig(format!("seed {s} is listed twice")));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidConfig("no variants listed".into()));
        }
        if !(self.depth_cap > 0.0) {
            return Err(Error::InvalidConfig(format!("depth_cap {} must be > 0", self.depth_cap)));
        }
        Ok(())
    }

    /// Total fitted dimension, bias included.
    pub fn basis_dim(&self) -> usize {
        1 + self.channel_plan.iter().sum::<usize>()
    }
}
