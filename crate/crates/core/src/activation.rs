//! Depth activations: map an unconstrained logit to a positive depth.
//!
//! `InverseSigmoid` is `g(x) = a / σ(x) = a (1 + e^-x)`, strictly decreasing
//! with range `(a, ∞)`. `ReluOffset` is `max(x, 0) + a`. In both cases `a`
//! is the smallest representable depth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    InverseSigmoid,
    ReluOffset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthActivation {
    pub kind: ActivationKind,
    /// Minimum depth in meters.
    pub a: f64,
    /// Relative margin above `a` that depths are clamped to before inversion.
    pub epsilon: f64,
}

impl Default for DepthActivation {
    fn default() -> Self {
        Self {
            kind: ActivationKind::InverseSigmoid,
            a: 1.0,
            epsilon: 1e-6,
        }
    }
}

/// Result of inverting one measured depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvertedDepth {
    pub logit: f64,
    /// The depth was raised to the clamp floor before inversion.
    pub clamped: bool,
    /// `d logit / d depth`; zero when clamped since the clamp is locally constant.
    pub slope: f64,
}

impl DepthActivation {
    pub fn new(kind: ActivationKind, a: f64, epsilon: f64) -> Result<Self> {
        let act = Self { kind, a, epsilon };
        act.validate()?;
        Ok(act)
    }

    pub fn inverse_sigmoid(a: f64) -> Result<Self> {
        Self::new(ActivationKind::InverseSigmoid, a, 1e-6)
    }

    pub fn relu_offset(a: f64) -> Result<Self> {
        Self::new(ActivationKind::ReluOffset, a, 1e-6)
    }

    pub fn validate(&self) -> Result<()> {
        let a_ok = match self.kind {
            ActivationKind::InverseSigmoid => self.a > 0.0,
            // a = 0 is plain ReLU
            ActivationKind::ReluOffset => self.a >= 0.0,
        };
        if !a_ok || !self.a.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "activation minimum depth a = {} is out of range",
                self.a
            )));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "activation epsilon = {} must be positive",
                self.epsilon
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::InverseSigmoid => self.a * (1.0 + (-x).exp()),
            ActivationKind::ReluOffset => x.max(0.0) + self.a,
        }
    }

    /// `g'(x)`. For the inverse sigmoid this uses `g'(x) = a - g(x)`.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::InverseSigmoid => self.a - self.forward(x),
            // subgradient 0 at the kink
            ActivationKind::ReluOffset => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `g''(x)`.
    #[inline]
    pub fn second_derivative(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::InverseSigmoid => -self.derivative(x),
            ActivationKind::ReluOffset => 0.0,
        }
    }

    /// `g⁻¹(s)` with the clamp applied; see [`DepthActivation::invert`].
    pub fn inverse(&self, s: f64) -> Result<f64> {
        self.invert(s).map(|inv| inv.logit)
    }

    /// Inverts a measured depth. For the inverse sigmoid, depths at or
    /// below `a (1 + epsilon)` are clamped to that value first so the
    /// transform stays total. `ReluOffset` returns `s - a` unclamped; depths
    /// below `a` land on negative logits.
    pub fn invert(&self, s: f64) -> Result<InvertedDepth> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::NonPositiveDepth { value: s });
        }
        Ok(match self.kind {
            ActivationKind::InverseSigmoid => {
                let floor = self.a * (1.0 + self.epsilon);
                let clamped = s < floor;
                let sc = if clamped { floor } else { s };
                let excess = sc - self.a;
                InvertedDepth {
                    logit: -(excess / self.a).ln(),
                    clamped,
                    slope: if clamped { 0.0 } else { -1.0 / excess },
                }
            }
            ActivationKind::ReluOffset => InvertedDepth {
                logit: s - self.a,
                clamped: false,
                slope: 1.0,
            },
        })
    }

    /// Smallest depth that inverts without clamping.
    pub fn clamp_floor(&self) -> f64 {
        match self.kind {
            ActivationKind::InverseSigmoid => self.a * (1.0 + self.epsilon),
            ActivationKind::ReluOffset => 0.0,
        }
    }
}
