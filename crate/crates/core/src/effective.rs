//! Monte Carlo sampling of the one-dimensional effective process.
//!
//! Each path evolves the teacher-orthogonal pre-activation
//!
//! ```text
//! η^{t+1} = (1 - γλ + Γ^t) η^t - γ_g s^t l'(η^t + η* m^t, y)
//!         + Σ_{k<t} R_g(t,k) η^k + u^t
//! ```
//!
//! with `y = sign(η*)`, `u ~ GP(C_g)` and Bernoulli masks `s^t`. Alongside
//! the trajectory every path carries its Jacobian `∂η^t/∂u^s`, which the
//! solver turns into the memory kernel.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{DmftError, Result};
use crate::kernels::KernelSet;
use crate::loss::label;
use crate::numerics::{
    cholesky_factor, correlated_draw, psd_project, standard_normal, Purpose, RngStream,
};
use crate::params::{MaskMode, ModelParams};

/// Paths whose pre-activation exceeds this are declared divergent.
pub const DIVERGENCE_BOUND: f64 = 1e8;

/// A deterministic nudge applied while replaying paths with identical draws.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Perturbation {
    #[default]
    None,
    /// `u^step += eps`.
    Noise { step: usize, eps: f64 },
    /// The loss argument at `step` is shifted by `eps` (only inside `l'`).
    LossArgument { step: usize, eps: f64 },
}

/// One realization of the effective process.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectivePath {
    /// `η^0 ..= η^T`.
    pub eta: Vec<f64>,
    pub eta_star: f64,
    pub label: f64,
    /// `s^0 .. s^{T-1}` as 0.0 / 1.0.
    pub mask: Vec<f64>,
    /// `u^0 .. u^{T-1}`.
    pub noise: Vec<f64>,
    /// `l'` and `l''` at `η^t + η* m^t`, for `t < T`.
    pub loss_first: Vec<f64>,
    pub loss_second: Vec<f64>,
    /// `(T + 1) x T` row-major table of `∂η^t/∂u^s`.
    jac: Vec<f64>,
}

impl EffectivePath {
    pub fn horizon(&self) -> usize {
        self.mask.len()
    }

    /// `∂η^t / ∂u^s`; zero for `t <= s`.
    pub fn jac(&self, t: usize, s: usize) -> f64 {
        self.jac[t * self.horizon() + s]
    }

    pub fn jacobian_table(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.horizon() + 1, self.horizon(), &self.jac)
    }
}

/// A batch of independent paths simulated under one kernel set.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub paths: Vec<EffectivePath>,
    /// The magnetization series the paths were run with.
    pub magnetization: Vec<f64>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.magnetization.len().saturating_sub(1)
    }
}

/// Kernel-bound sampler; holds the noise factor so chunks can share it.
#[derive(Debug, Clone)]
pub struct EffectiveSampler<'a> {
    params: &'a ModelParams,
    kernels: &'a KernelSet,
    factor: DMatrix<f64>,
}

impl<'a> EffectiveSampler<'a> {
    pub fn new(params: &'a ModelParams, kernels: &'a KernelSet) -> Result<Self> {
        params.validate()?;
        kernels.check_shapes(params.horizon)?;
        if kernels.magnetization.len() != params.horizon + 1 {
            return Err(DmftError::HorizonMismatch {
                expected: params.horizon + 1,
                found: kernels.magnetization.len(),
            });
        }
        let repaired = psd_project(&kernels.noise_cov, 0.0)?;
        let factor = cholesky_factor(&repaired)?;
        Ok(Self {
            params,
            kernels,
            factor,
        })
    }

    /// Simulates one path. Draws depend only on `(seed, index)`.
    pub fn path(&self, seed: u64, index: u64, perturbation: Perturbation) -> Result<EffectivePath> {
        let p = self.params;
        let k = self.kernels;
        let horizon = p.horizon;

        let eta_star = standard_normal(&mut RngStream::new(seed, index, Purpose::Teacher).rng());
        let y = label(eta_star);
        let eta0 = p.orthogonal_variance().sqrt()
            * standard_normal(&mut RngStream::new(seed, index, Purpose::Init).rng());

        let mut mask = vec![0.0; horizon];
        if p.mask_mode == MaskMode::Bernoulli {
            let mut rng = RngStream::new(seed, index, Purpose::BatchMask).rng();
            for s in mask.iter_mut() {
                *s = if rng.random::<f64>() < p.b { 1.0 } else { 0.0 };
            }
        }

        let mut noise = vec![0.0; horizon];
        correlated_draw(
            &self.factor,
            &mut RngStream::new(seed, index, Purpose::Noise).rng(),
            &mut noise,
        );
        if let Perturbation::Noise { step, eps } = perturbation {
            if step < horizon {
                noise[step] += eps;
            }
        }

        let ridge = p.ridge_factor();
        let gamma_g = p.effective_gamma();
        let memory = k.memory.matrix();
        let mut eta = vec![0.0; horizon + 1];
        let mut loss_first = vec![0.0; horizon];
        let mut loss_second = vec![0.0; horizon];
        eta[0] = eta0;
        for t in 0..horizon {
            let mut r = eta[t] + eta_star * k.magnetization[t];
            if let Perturbation::LossArgument { step, eps } = perturbation {
                if step == t {
                    r += eps;
                }
            }
            let d = p.loss.derivatives(r, y);
            loss_first[t] = d.first;
            loss_second[t] = d.second;
            let mut next = (ridge + k.local_response[t]) * eta[t] - gamma_g * mask[t] * d.first
                + noise[t];
            for j in 0..t {
                next += memory[(t, j)] * eta[j];
            }
            if !next.is_finite() || next.abs() > DIVERGENCE_BOUND {
                return Err(DmftError::Diverged {
                    step: t + 1,
                    value: next.abs(),
                });
            }
            eta[t + 1] = next;
        }

        let mut path = EffectivePath {
            eta,
            eta_star,
            label: y,
            mask,
            noise,
            loss_first,
            loss_second,
            jac: vec![0.0; (horizon + 1) * horizon],
        };
        propagate_jacobian(&mut path, p, k)?;
        Ok(path)
    }

    /// Simulates paths `stream.path .. stream.path + n_paths` in parallel.
    /// Only the seed and path offset of `stream` are used; each kind of draw
    /// gets its own purpose tag.
    pub fn simulate(
        &self,
        n_paths: usize,
        stream: RngStream,
        perturbation: Perturbation,
    ) -> Result<Ensemble> {
        if n_paths == 0 {
            return Err(DmftError::EmptyEnsemble);
        }
        let paths = (0..n_paths as u64)
            .into_par_iter()
            .map(|i| self.path(stream.seed, stream.path + i, perturbation))
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble {
            paths,
            magnetization: self.kernels.magnetization.clone(),
        })
    }
}

/// Samples `n_paths` effective paths under fixed kernels.
pub fn simulate_paths(
    params: &ModelParams,
    kernels: &KernelSet,
    n_paths: usize,
    stream: RngStream,
) -> Result<Ensemble> {
    EffectiveSampler::new(params, kernels)?.simulate(n_paths, stream, Perturbation::None)
}

/// Replays the paths of [`simulate_paths`] with identical draws, applying
/// `perturbation`.
pub fn replay(
    params: &ModelParams,
    kernels: &KernelSet,
    n_paths: usize,
    stream: RngStream,
    perturbation: Perturbation,
) -> Result<Ensemble> {
    EffectiveSampler::new(params, kernels)?.simulate(n_paths, stream, perturbation)
}

/// Fills the Jacobian table of `path` from its stored trajectory:
///
/// ```text
/// J[t+1][s] = (1 - γλ + Γ^t - γ_g s^t l''^t) J[t][s] + Σ_{k<t} R_g(t,k) J[k][s] + δ_{ts}
/// ```
pub fn propagate_jacobian(
    path: &mut EffectivePath,
    params: &ModelParams,
    kernels: &KernelSet,
) -> Result<()> {
    let horizon = path.horizon();
    if horizon != params.horizon {
        return Err(DmftError::HorizonMismatch {
            expected: params.horizon,
            found: horizon,
        });
    }
    let ridge = params.ridge_factor();
    let gamma_g = params.effective_gamma();
    let memory = kernels.memory.matrix();
    let jac = &mut path.jac;
    jac.iter_mut().for_each(|x| *x = 0.0);
    for t in 0..horizon {
        let local = ridge + kernels.local_response[t]
            - gamma_g * path.mask[t] * path.loss_second[t];
        // Only sources s < t can already be nonzero at time t.
        for s in 0..t {
            let mut v = local * jac[t * horizon + s];
            for k in (s + 1)..t {
                v += memory[(t, k)] * jac[k * horizon + s];
            }
            if !v.is_finite() {
                return Err(DmftError::NonFinite {
                    row: t + 1,
                    col: s,
                    value: v,
                });
            }
            jac[(t + 1) * horizon + s] = v;
        }
        jac[(t + 1) * horizon + t] = 1.0;
    }
    Ok(())
}
