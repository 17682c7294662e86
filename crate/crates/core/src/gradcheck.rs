//! Analytic gradients against the finite-difference oracle on seeded
//! random problems.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::backward::{backward_gn, backward_linear, finite_diff_oracle, relative_error, FitGradients, FitProblem};
use crate::config::GradcheckConfig;
use crate::error::{Error, Result};
use crate::fitter::{fit_gauss_newton_taped, FitConfig, Targets};
use crate::synth::{derive_seed, random_fit_problem};

const MAX_REDRAWS: u64 = 8;

/// Worst relative error per gradient field over all instances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ComponentErrors {
    pub basis: f64,
    pub targets: f64,
    pub depths: f64,
}

impl ComponentErrors {
    pub fn max(&self) -> f64 {
        self.basis.max(self.targets).max(self.depths)
    }

    fn absorb(&mut self, analytic: &FitGradients, oracle: &FitGradients) {
        self.basis = self.basis.max(relative_error(&analytic.grad_basis, &oracle.grad_basis));
        self.targets = self.targets.max(relative_error(&analytic.grad_targets, &oracle.grad_targets));
        self.depths = self.depths.max(relative_error(&analytic.grad_depths, &oracle.grad_depths));
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub instances: usize,
    /// Instances redrawn because the backward pass reported a kink.
    pub redraws: usize,
    pub linear: ComponentErrors,
    /// `None` when the configured fit has no Gauss-Newton steps.
    pub gauss_newton: Option<ComponentErrors>,
    pub tolerance_linear: f64,
    pub tolerance_gn: f64,
    pub passed: bool,
}

/// Loss `½‖w - w_ref‖²` with a seeded reference; returns the reference.
fn reference_weights(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xfeed));
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn quadratic_loss(w: &[f64], w_ref: &[f64]) -> f64 {
    0.5 * w.iter().zip(w_ref).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

/// Analytic and oracle gradients of the linear fit for one problem.
pub fn check_linear(problem: &FitProblem, step: f64, seed: u64) -> Result<(FitGradients, FitGradients)> {
    let linear = FitProblem {
        cfg: FitConfig::linear(problem.cfg.lambda),
        ..problem.clone()
    };
    let w = linear.solve()?;
    let w_ref = reference_weights(w.len(), seed);
    let grad_w: Vec<f64> = w.iter().zip(&w_ref).map(|(a, b)| a - b).collect();
    let targets = Targets::from_depths(linear.samples.depths(), &linear.act)?;
    let analytic = backward_linear(&linear.basis, &targets, linear.cfg.lambda, &w, &grad_w)?;
    let oracle = finite_diff_oracle(&linear, |w| quadratic_loss(w, &w_ref), step)?;
    Ok((analytic, oracle))
}

/// Analytic and oracle gradients of the configured Gauss-Newton fit.
pub fn check_gauss_newton(problem: &FitProblem, step: f64, seed: u64) -> Result<(FitGradients, FitGradients)> {
    let (res, tape) = fit_gauss_newton_taped(&problem.basis, &problem.samples, &problem.act, &problem.cfg)?;
    let w_ref = reference_weights(res.weights.len(), seed);
    let grad_w: Vec<f64> = res.weights.iter().zip(&w_ref).map(|(a, b)| a - b).collect();
    let analytic = backward_gn(&tape, &grad_w)?;
    let oracle = finite_diff_oracle(problem, |w| quadratic_loss(w, &w_ref), step)?;
    Ok((analytic, oracle))
}

pub fn run_gradcheck(cfg: &GradcheckConfig, tolerance: Option<f64>) -> Result<GradcheckReport> {
    let with_gn = cfg.problem.fit.iterations > 0;
    let mut report = GradcheckReport {
        instances: cfg.instances,
        redraws: 0,
        linear: ComponentErrors::default(),
        gauss_newton: with_gn.then(ComponentErrors::default),
        tolerance_linear: tolerance.unwrap_or(cfg.tolerance_linear),
        tolerance_gn: tolerance.unwrap_or(cfg.tolerance_gn),
        passed: false,
    };

    for i in 0..cfg.instances as u64 {
        let mut done = false;
        for attempt in 0..MAX_REDRAWS {
            let seed = derive_seed(derive_seed(cfg.seed, i), attempt);
            let problem = random_fit_problem(&cfg.problem, seed)?;
            let gn = if with_gn {
                match check_gauss_newton(&problem, cfg.step, seed) {
                    Ok(pair) => Some(pair),
                    Err(Error::KinkProximity { .. }) => {
                        report.redraws += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            let (a, o) = check_linear(&problem, cfg.step, seed)?;
            report.linear.absorb(&a, &o);
            if let (Some((a, o)), Some(errs)) = (gn, report.gauss_newton.as_mut()) {
                errs.absorb(&a, &o);
            }
            done = true;
            break;
        }
        if !done {
            return Err(Error::KinkProximity {
                iteration: 0,
                sample: 0,
                margin: 0.0,
            });
        }
    }
    report.passed = report.linear.max() <= report.tolerance_linear
        && report.gauss_newton.is_none_or(|e| e.max() <= report.tolerance_gn);
    Ok(report)
}
