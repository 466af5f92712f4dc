//! Per-observation gradient/hessian providers for the booster.

use crate::boosting::GradHess;
use crate::{Error, Result};

/// Hessian floor for the deviance loss, relative to the observation weight.
pub const DEVIANCE_HESSIAN_FLOOR: f64 = 1e-16;

/// The objective a boosting run minimizes. All vectors are aligned with the
/// training rows.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    /// `Σ (t_i - f_i)²`
    Squared { target: Vec<f64> },
    /// `Σ w_i (t_i - f_i)²`
    WeightedSquared { target: Vec<f64>, weight: Vec<f64> },
    /// `Σ w_i φ(z_i f_i)` with `φ(x) = log(1 + e^{-2x})`
    WeightedDeviance { label: Vec<i8>, weight: Vec<f64> },
}

impl LossSpec {
    pub fn squared(target: Vec<f64>) -> Self {
        LossSpec::Squared { target }
    }

    pub fn weighted_squared(target: Vec<f64>, weight: Vec<f64>) -> Result<Self> {
        if target.len() != weight.len() {
            return Err(Error::DimensionMismatch {
                expected: target.len(),
                got: weight.len(),
            });
        }
        if let Some(i) = weight.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "weighted squared loss needs positive weights, observation {i} has {}",
                weight[i]
            )));
        }
        Ok(LossSpec::WeightedSquared { target, weight })
    }

    pub fn weighted_deviance(label: Vec<i8>, weight: Vec<f64>) -> Result<Self> {
        if label.len() != weight.len() {
            return Err(Error::DimensionMismatch {
                expected: label.len(),
                got: weight.len(),
            });
        }
        if let Some(i) = label.iter().position(|&z| z != 1 && z != -1) {
            return Err(Error::InvalidArgument(format!(
                "deviance label {} at observation {i} not in {{-1, +1}}",
                label[i]
            )));
        }
        if let Some(i) = weight.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "deviance weight {} at observation {i} must be finite and >= 0",
                weight[i]
            )));
        }
        Ok(LossSpec::WeightedDeviance { label, weight })
    }

    pub fn len(&self) -> usize {
        match self {
            LossSpec::Squared { target } => target.len(),
            LossSpec::WeightedSquared { target, .. } => target.len(),
            LossSpec::WeightedDeviance { label, .. } => label.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gradient/hessian at the current predictions `f`.
    pub fn grad_hess(&self, f: &[f64]) -> GradHess {
        assert_eq!(f.len(), self.len(), "predictions must align with the loss");
        match self {
            LossSpec::Squared { target } => grad_hess_squared(target, f),
            LossSpec::WeightedSquared { target, weight } => {
                grad_hess_weighted_squared(target, weight, f)
            }
            LossSpec::WeightedDeviance { label, weight } => {
                grad_hess_weighted_deviance(label, weight, f)
            }
        }
    }

    /// Loss contribution of observation `i` at prediction `f`.
    pub fn value(&self, i: usize, f: f64) -> f64 {
        match self {
            LossSpec::Squared { target } => (target[i] - f).powi(2),
            LossSpec::WeightedSquared { target, weight } => weight[i] * (target[i] - f).powi(2),
            LossSpec::WeightedDeviance { label, weight } => {
                weight[i] * deviance(f64::from(label[i]) * f)
            }
        }
    }

    /// Total loss over all observations.
    pub fn total(&self, f: &[f64]) -> f64 {
        f.iter().enumerate().map(|(i, &fi)| self.value(i, fi)).sum()
    }
}

pub fn grad_hess_squared(target: &[f64], f: &[f64]) -> GradHess {
    GradHess {
        g: target.iter().zip(f).map(|(t, fi)| -2.0 * (t - fi)).collect(),
        h: vec![2.0; target.len()],
    }
}

pub fn grad_hess_weighted_squared(target: &[f64], weight: &[f64], f: &[f64]) -> GradHess {
    GradHess {
        g: target
            .iter()
            .zip(weight)
            .zip(f)
            .map(|((t, w), fi)| -2.0 * w * (t - fi))
            .collect(),
        h: weight.iter().map(|w| 2.0 * w).collect(),
    }
}

/// Deviance terms assembled with their observation weights: the linear
/// coefficient `w_i z_i φ'(z_i f_i)` and quadratic coefficient
/// `w_i φ''(z_i f_i)` (floored at `1e-16 w_i`).
pub fn grad_hess_weighted_deviance(label: &[i8], weight: &[f64], f: &[f64]) -> GradHess {
    let n = label.len();
    let mut g = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    for i in 0..n {
        let z = f64::from(label[i]);
        let margin = z * f[i];
        let w = weight[i];
        g.push(w * z * deviance_d1(margin));
        h.push((w * deviance_d2(margin)).max(DEVIANCE_HESSIAN_FLOOR * w));
    }
    GradHess { g, h }
}

/// `φ(x) = log(1 + e^{-2x})`
pub fn deviance(x: f64) -> f64 {
    let t = -2.0 * x;
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `φ'(x) = -2 / (1 + e^{2x})`
pub fn deviance_d1(x: f64) -> f64 {
    if x >= 0.0 {
        let e = (-2.0 * x).exp();
        -2.0 * e / (1.0 + e)
    } else {
        -2.0 / (1.0 + (2.0 * x).exp())
    }
}

/// `φ''(x) = 4 e^{2x} / (1 + e^{2x})²`, evaluated through `e^{-2|x|}`.
pub fn deviance_d2(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}
