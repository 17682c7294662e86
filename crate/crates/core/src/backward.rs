//! Input sensitivities of the fitted weights.
//!
//! The linear fit is differentiated implicitly through `A w = Bᵀt` with
//! `A = λI + BᵀB`. Gauss-Newton fits are differentiated by unrolling the
//! recorded steps in reverse, then handing the accumulated weight gradient
//! to the linear rule. [`finite_diff_oracle`] reruns the forward pass under
//! central differences and is meant for verification only.

use rayon::prelude::*;

use crate::activation::{ActivationKind, DepthActivation};
use crate::error::{check_len, Error, Result};
use crate::fitter::{fit_with_targets, linear_solve, BasisStack, FitConfig, GnTape, SparseDepthSet, Targets};
use crate::linalg::solve_spd_backward_factored;

/// Samples whose standardized residual sits closer than this to the Huber
/// threshold (or, for ReLU, whose logit sits this close to 0) make the
/// unrolled gradient unreliable.
pub const KINK_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FitGradients {
    n_samples: usize,
    dim: usize,
    /// `∂L/∂B`, `N × (M+1)` row-major. Column 0 belongs to the constant bias
    /// column and is reported for completeness only.
    pub grad_basis: Vec<f64>,
    /// `∂L/∂t`, logit targets, holding the depths in the residual fixed.
    pub grad_targets: Vec<f64>,
    /// Total `∂L/∂s` in meters; zero wherever the inverse clamp was active
    /// and the sample only enters through its target.
    pub grad_depths: Vec<f64>,
}

impl FitGradients {
    pub fn zeros(n_samples: usize, dim: usize) -> Self {
        Self {
            n_samples,
            dim,
            grad_basis: vec![0.0; n_samples * dim],
            grad_targets: vec![0.0; n_samples],
            grad_depths: vec![0.0; n_samples],
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn basis(&self, i: usize, j: usize) -> f64 {
        self.grad_basis[i * self.dim + j]
    }

    /// Column 0 is the structural bias and is never trained.
    pub fn is_trainable_column(j: usize) -> bool {
        j != 0
    }

    /// `∂L/∂B` without the bias column, `N × M` row-major.
    pub fn trainable_basis_grad(&self) -> Vec<f64> {
        self.grad_basis
            .chunks_exact(self.dim)
            .flat_map(|row| row[1..].iter().copied())
            .collect()
    }

    /// Largest per-field relative error against `reference`, see
    /// [`relative_error`].
    pub fn rel_error(&self, reference: &FitGradients) -> f64 {
        relative_error(&self.grad_basis, &reference.grad_basis)
            .max(relative_error(&self.grad_targets, &reference.grad_targets))
            .max(relative_error(&self.grad_depths, &reference.grad_depths))
    }
}

/// `max|a - b| / max(‖a‖∞, ‖b‖∞)`, or 0 when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error on vectors of different length");
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = inf(a).max(inf(b));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Gradients of the ridge fit `w = (λI + BᵀB)⁻¹Bᵀt` given `∂L/∂w`.
pub fn backward_linear(
    b: &BasisStack,
    targets: &Targets,
    lambda: f64,
    w: &[f64],
    grad_w: &[f64],
) -> Result<FitGradients> {
    let (n, p) = (b.n_samples(), b.dim());
    check_len("targets", n, targets.logits.len())?;
    check_len("weights", p, w.len())?;
    check_len("weight gradient", p, grad_w.len())?;
    let factor = crate::linalg::cholesky(&b.normal_matrix(lambda))?;
    let u = factor.solve(grad_w)?;
    let bu = b.mul(&u);
    let bw = b.mul(w);

    let mut g = FitGradients::zeros(n, p);
    for i in 0..n {
        let r = targets.logits[i] - bw[i];
        let row = &mut g.grad_basis[i * p..(i + 1) * p];
        for j in 0..p {
            row[j] = r * u[j] - bu[i] * w[j];
        }
    }
    g.grad_depths = bu.iter().zip(&targets.slopes).map(|(gt, s)| gt * s).collect();
    g.grad_targets = bu;
    Ok(g)
}

/// Reverse pass through a recorded Gauss-Newton fit given `∂L/∂w` of the
/// final weights.
pub fn backward_gn(tape: &GnTape, grad_w: &[f64]) -> Result<FitGradients> {
    let b = &tape.basis;
    let (n, p) = (b.n_samples(), b.dim());
    check_len("weight gradient", p, grad_w.len())?;
    check_kinks(tape)?;

    let cfg = &tape.cfg;
    let mut w_bar = grad_w.to_vec();
    let mut b_bar = vec![0.0; n * p];
    let mut s_bar = vec![0.0; n];
    let mut hb = vec![0.0; p];

    for step in tape.steps.iter().rev() {
        // w_{k+1} = w_k - x,  H x = q
        let x_bar: Vec<f64> = w_bar.iter().map(|v| -v).collect();
        let sg = solve_spd_backward_factored(&step.factor, &step.solution, &x_bar)?;
        let (h_bar_mat, q_bar) = (&sg.grad_a, &sg.grad_rhs);
        let mut z_bar = vec![0.0; n];

        for i in 0..n {
            let row = b.row(i);
            for (j, out) in hb.iter_mut().enumerate() {
                *out = (0..p).map(|k| h_bar_mat.get(j, k) * row[k]).sum();
            }
            let h_bar: f64 = row.iter().zip(&hb).map(|(x, y)| x * y).sum();
            let e_bar: f64 = row.iter().zip(q_bar).map(|(x, y)| x * y).sum();

            let (d, r, om) = (step.slopes[i], step.residuals[i], step.omega[i]);
            let h = om * d * d;
            let e = om * r * d;
            let brow = &mut b_bar[i * p..(i + 1) * p];
            for j in 0..p {
                brow[j] += 2.0 * h * hb[j] + e * q_bar[j];
            }

            let om_bar = h_bar * d * d + e_bar * r * d;
            let d_bar = 2.0 * h_bar * om * d + e_bar * om * r;
            let mut r_bar = e_bar * om * d;

            let sigma = tape.sigmas[i];
            let u = step.standardized[i];
            if cfg.robust && u.abs() > cfg.huber_delta {
                let c_bar = om_bar / (sigma * sigma);
                let dc_du = -cfg.huber_delta * u.signum() / (u * u);
                r_bar += c_bar * dc_du / sigma;
            }

            s_bar[i] -= r_bar;
            z_bar[i] = r_bar * d + d_bar * step.curvatures[i];
        }

        for i in 0..n {
            let zb = z_bar[i];
            let row = b.row(i);
            let brow = &mut b_bar[i * p..(i + 1) * p];
            for j in 0..p {
                w_bar[j] += zb * row[j];
                brow[j] += zb * step.weights[j];
            }
        }
    }

    let mut g = backward_linear(b, &tape.targets, cfg.lambda, &tape.init_weights, &w_bar)?;
    for (dst, src) in g.grad_basis.iter_mut().zip(&b_bar) {
        *dst += src;
    }
    for (dst, src) in g.grad_depths.iter_mut().zip(&s_bar) {
        *dst += src;
    }
    Ok(g)
}

fn check_kinks(tape: &GnTape) -> Result<()> {
    let cfg = &tape.cfg;
    for (k, step) in tape.steps.iter().enumerate() {
        if cfg.robust {
            for (i, u) in step.standardized.iter().enumerate() {
                let margin = (u.abs() - cfg.huber_delta).abs();
                if margin < KINK_MARGIN {
                    return Err(Error::KinkProximity {
                        iteration: k,
                        sample: i,
                        margin,
                    });
                }
            }
        }
        if tape.act.kind == ActivationKind::ReluOffset {
            for i in 0..tape.basis.n_samples() {
                let z: f64 = tape.basis.row(i).iter().zip(&step.weights).map(|(b, w)| b * w).sum();
                if z.abs() < KINK_MARGIN {
                    return Err(Error::KinkProximity {
                        iteration: k,
                        sample: i,
                        margin: z.abs(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// A fit paired with a single use of its backward pass.
#[derive(Debug)]
pub struct FitHandle {
    tape: Option<GnTape>,
}

impl FitHandle {
    /// Gradients for `∂L/∂w`; a second call fails with `HandleConsumed`.
    pub fn backward(&mut self, grad_w: &[f64]) -> Result<FitGradients> {
        let tape = self.tape.take().ok_or(Error::HandleConsumed)?;
        backward_gn(&tape, grad_w)
    }

    pub fn is_consumed(&self) -> bool {
        self.tape.is_none()
    }
}

/// [`fit_gauss_newton`](crate::fitter::fit_gauss_newton) returning a
/// one-shot backward handle.
pub fn fit_with_handle(
    b: &BasisStack,
    s: &SparseDepthSet,
    act: &DepthActivation,
    cfg: &FitConfig,
) -> Result<(crate::fitter::FitResult, FitHandle)> {
    let (res, tape) = crate::fitter::fit_gauss_newton_taped(b, s, act, cfg)?;
    Ok((res, FitHandle { tape: Some(tape) }))
}

/// Everything the forward pass depends on.
#[derive(Debug, Clone)]
pub struct FitProblem {
    pub basis: BasisStack,
    pub samples: SparseDepthSet,
    pub act: DepthActivation,
    pub cfg: FitConfig,
}

impl FitProblem {
    /// Fitted weights for the problem as stated.
    pub fn solve(&self) -> Result<Vec<f64>> {
        let t = Targets::from_depths(self.samples.depths(), &self.act)?;
        self.solve_with(&self.basis, &t, self.samples.depths())
    }

    fn solve_with(&self, b: &BasisStack, t: &Targets, depths: &[f64]) -> Result<Vec<f64>> {
        if self.cfg.iterations == 0 {
            return linear_solve(b, &t.logits, self.cfg.lambda).map(|(w, _)| w);
        }
        let (res, _) = fit_with_targets(b, t, depths, self.samples.sigmas(), &self.act, &self.cfg, false)?;
        Ok(res.weights)
    }
}

/// Central differences of `loss(w)` with respect to every basis entry
/// (bias column included), every logit target with the depths fixed, and
/// every depth with its target re-derived. Each perturbation reruns the
/// full forward fit.
pub fn finite_diff_oracle<L>(problem: &FitProblem, loss: L, step: f64) -> Result<FitGradients>
where
    L: Fn(&[f64]) -> f64 + Sync,
{
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step {step} must be > 0")));
    }
    let b = &problem.basis;
    let (n, p) = (b.n_samples(), b.dim());
    let depths = problem.samples.depths();
    let targets = Targets::from_depths(depths, &problem.act)?;

    let central = |plus: Result<Vec<f64>>, minus: Result<Vec<f64>>| -> Result<f64> {
        Ok((loss(&plus?) - loss(&minus?)) / (2.0 * step))
    };

    let grad_basis = (0..n * p)
        .into_par_iter()
        .map(|idx| {
            let shifted = |h: f64| {
                let mut rows = b.as_slice().to_vec();
                rows[idx] += h;
                problem.solve_with(&BasisStack::from_raw(n, p, rows), &targets, depths)
            };
            central(shifted(step), shifted(-step))
        })
        .collect::<Result<Vec<_>>>()?;

    let grad_targets = (0..n)
        .into_par_iter()
        .map(|i| {
            let shifted = |h: f64| {
                let mut t = targets.clone();
                t.logits[i] += h;
                problem.solve_with(b, &t, depths)
            };
            central(shifted(step), shifted(-step))
        })
        .collect::<Result<Vec<_>>>()?;

    let grad_depths = (0..n)
        .into_par_iter()
        .map(|i| {
            let shifted = |h: f64| {
                let mut s = depths.to_vec();
                s[i] += h;
                let t = Targets::from_depths(&s, &problem.act)?;
                problem.solve_with(b, &t, &s)
            };
            central(shifted(step), shifted(-step))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(FitGradients {
        n_samples: n,
        dim: p,
        grad_basis,
        grad_targets,
        grad_depths,
    })
}
