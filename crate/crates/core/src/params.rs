use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::loss::LossSpec;

/// Prefactor on the per-sample gradient term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradNorm {
    /// `γ / b`, the mini-batch average.
    #[default]
    PerBatch,
    /// `γ`.
    Raw,
}

/// How mini-batch membership is drawn. `AllOff` switches the data gradient
/// off entirely, leaving pure ridge contraction; full-batch algorithms treat
/// `Bernoulli` as "every sample on".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    #[default]
    Bernoulli,
    AllOff,
}

/// Problem constants shared by the theory and the simulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Samples per dimension, `n / d`.
    pub alpha: f64,
    /// Learning rate.
    pub gamma: f64,
    /// Ridge strength.
    #[serde(default)]
    pub lambda: f64,
    /// Mini-batch fraction.
    #[serde(default = "one")]
    pub b: f64,
    /// Langevin temperature.
    #[serde(default)]
    pub temperature: f64,
    /// Number of steps.
    pub horizon: usize,
    #[serde(default)]
    pub loss: LossSpec,
    /// Initial overlap with the teacher.
    #[serde(default)]
    pub m0: f64,
    /// Initial per-coordinate second moment of the weights.
    #[serde(default = "one")]
    pub c0: f64,
    #[serde(default)]
    pub grad_norm: GradNorm,
    #[serde(default)]
    pub mask_mode: MaskMode,
}

fn one() -> f64 {
    1.0
}

impl ModelParams {
    pub fn new(alpha: f64, gamma: f64, lambda: f64, b: f64, horizon: usize) -> Self {
        Self {
            alpha,
            gamma,
            lambda,
            b,
            temperature: 0.0,
            horizon,
            loss: LossSpec::Logistic,
            m0: 0.0,
            c0: 1.0,
            grad_norm: GradNorm::PerBatch,
            mask_mode: MaskMode::Bernoulli,
        }
    }

    pub fn with_m0(mut self, m0: f64) -> Self {
        self.m0 = m0;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_mask_mode(mut self, mode: MaskMode) -> Self {
        self.mask_mode = mode;
        self
    }

    pub fn with_loss(mut self, loss: LossSpec) -> Self {
        self.loss = loss;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", format!("must be >= 0, got {}", self.gamma)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be >= 0, got {}", self.lambda)));
        }
        if !(self.b > 0.0 && self.b <= 1.0) {
            return Err(invalid("b", format!("must lie in (0, 1], got {}", self.b)));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(invalid(
                "temperature",
                format!("must be >= 0, got {}", self.temperature),
            ));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be >= 1"));
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(invalid("c0", format!("must be > 0, got {}", self.c0)));
        }
        if !(self.m0.abs() <= self.c0.sqrt()) {
            return Err(invalid(
                "m0",
                format!("|m0| must not exceed sqrt(c0) = {}, got {}", self.c0.sqrt(), self.m0),
            ));
        }
        Ok(())
    }

    /// Prefactor in front of `s^t l'` in the update.
    pub fn effective_gamma(&self) -> f64 {
        match self.grad_norm {
            GradNorm::PerBatch => self.gamma / self.b,
            GradNorm::Raw => self.gamma,
        }
    }

    /// `1 - γ λ`.
    pub fn ridge_factor(&self) -> f64 {
        1.0 - self.gamma * self.lambda
    }

    /// Extra diagonal variance the Langevin noise adds to the effective noise.
    pub fn langevin_variance(&self) -> f64 {
        self.gamma * self.gamma * self.temperature
    }

    /// Variance of the teacher-orthogonal part of the initial pre-activation.
    pub fn orthogonal_variance(&self) -> f64 {
        (self.c0 - self.m0 * self.m0).max(0.0)
    }
}
