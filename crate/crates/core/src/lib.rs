//! Least-squares fitting head for sparse-to-dense depth completion.
//!
//! Per-pixel basis features are combined affinely into a logit and mapped
//! to depth through a positive activation. The combination weights are not
//! learned but fitted per image to sparse depth samples, either by ridge
//! regression in logit space or by a few (optionally Huber-robust)
//! Gauss-Newton steps in depth space. Both fits are differentiable with
//! respect to the bases and the samples.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod backward;
pub mod bench;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fitter;
pub mod gradcheck;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod multiscale;
pub mod synth;

pub use activation::{ActivationKind, DepthActivation};
pub use backward::{backward_gn, backward_linear, finite_diff_oracle, fit_with_handle, FitGradients, FitHandle, FitProblem};
pub use config::{ExperimentConfig, Variant};
pub use error::{Error, Result};
pub use fitter::{
    fit_gauss_newton, fit_gauss_newton_taped, fit_linear, predict_dense, BasisStack, FitConfig, FitResult, GnTape,
    SparseDepthSet, Targets,
};
pub use grid::{DepthGrid, Grid};
pub use metrics::{evaluate, MetricReport};
pub use multiscale::{flatten_to_stack, reconstruct_at_scale, upsample_bilinear, MultiScaleBases, ScaleWeights};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
