//! Scalar state evolution for gradient descent with a fresh data matrix at
//! every step. With fresh data the effective process is Markovian:
//!
//! ```text
//! ω^{t+1} = (1 - γ^t α E[f''(z^t)]) ω^t + γ^t u^t,   u^t ~ N(0, α E[f'(z^t)²])
//! ```
//!
//! with `z^t ~ N(0, ρ^t)`, so the second moment obeys a closed recursion.

use crate::error::{invalid, Result};
use crate::numerics::GaussHermite;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarDmftState {
    /// `ρ^0 ..= ρ^T`.
    pub rho: Vec<f64>,
    /// Noise variance `τ^t = α E[f'(z^t)²]`.
    pub tau: Vec<f64>,
    /// Contraction `a^t = 1 - γ^t α E[f''(z^t)]`.
    pub a: Vec<f64>,
}

impl ScalarDmftState {
    /// `E|ω^t| = sqrt(2 ρ^t / π)`, the Gaussian first absolute moment.
    pub fn mean_abs(&self) -> Vec<f64> {
        self.rho
            .iter()
            .map(|r| (2.0 * r / std::f64::consts::PI).sqrt())
            .collect()
    }
}

/// Iterates `ρ^{t+1} = (a^t)² ρ^t + (γ^t)² τ^t` for `gamma.len()` steps.
pub fn scalar_dmft<F, G>(
    f_prime: F,
    f_second: G,
    alpha: f64,
    gamma: &[f64],
    rho0: f64,
    order: usize,
) -> Result<ScalarDmftState>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if !(rho0 > 0.0 && rho0.is_finite()) {
        return Err(invalid("rho0", format!("must be > 0, got {rho0}")));
    }
    if !(alpha > 0.0) {
        return Err(invalid("alpha", format!("must be > 0, got {alpha}")));
    }
    let quad = GaussHermite::new(order)?;
    let steps = gamma.len();
    let mut rho = Vec::with_capacity(steps + 1);
    let mut tau = Vec::with_capacity(steps);
    let mut a = Vec::with_capacity(steps);
    rho.push(rho0);
    for (t, &g) in gamma.iter().enumerate() {
        let r = rho[t];
        let curvature = quad.expectation(&f_second, 0.0, r)?;
        let noise = alpha * quad.expectation(|z| f_prime(z).powi(2), 0.0, r)?;
        let contraction = 1.0 - g * alpha * curvature;
        a.push(contraction);
        tau.push(noise);
        rho.push(contraction * contraction * r + g * g * noise);
    }
    Ok(ScalarDmftState { rho, tau, a })
}
