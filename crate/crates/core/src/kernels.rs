//! The self-consistent objects of the effective process and their on-disk form.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DmftError, Result};
use crate::numerics::{psd_project, CausalKernel, SymmetricKernel};
use crate::params::ModelParams;

/// Kernels over a horizon of `T` steps.
///
/// `magnetization` has `T + 1` entries and is always derived from
/// `overlap_drift` through `m[t+1] = (1 - γλ) m[t] - υ[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    /// Covariance `C_g(t, s)` of the Gaussian noise `u`.
    pub noise_cov: SymmetricKernel,
    /// Memory kernel `R_g(t, s)`, `s < t`.
    pub memory: CausalKernel,
    /// Equal-time response `Γ^t`.
    pub local_response: Vec<f64>,
    /// Drift `υ^t` of the magnetization.
    pub overlap_drift: Vec<f64>,
    pub magnetization: Vec<f64>,
}

impl KernelSet {
    /// All kernels zero and `m` constant at `m0`.
    pub fn zeros(horizon: usize, m0: f64) -> Self {
        Self {
            noise_cov: SymmetricKernel::zeros(horizon),
            memory: CausalKernel::zeros(horizon),
            local_response: vec![0.0; horizon],
            overlap_drift: vec![0.0; horizon],
            magnetization: vec![m0; horizon + 1],
        }
    }

    /// Starting point of the fixed-point iteration: the memory-free process,
    /// with the Langevin variance already on the noise diagonal.
    pub fn initial(params: &ModelParams) -> Self {
        let mut k = Self::zeros(params.horizon, params.m0);
        k.noise_cov.add_diagonal(params.langevin_variance());
        k.rebuild_magnetization(params);
        k
    }

    /// Assembles a kernel set from raw parts and derives the magnetization.
    pub fn from_parts(
        params: &ModelParams,
        noise_cov: SymmetricKernel,
        memory: CausalKernel,
        local_response: Vec<f64>,
        overlap_drift: Vec<f64>,
    ) -> Result<Self> {
        let mut k = Self {
            noise_cov,
            memory,
            local_response,
            overlap_drift,
            magnetization: Vec::new(),
        };
        k.check_shapes(params.horizon)?;
        k.rebuild_magnetization(params);
        Ok(k)
    }

    pub fn horizon(&self) -> usize {
        self.local_response.len()
    }

    pub fn rebuild_magnetization(&mut self, params: &ModelParams) {
        let ridge = params.ridge_factor();
        let mut m = Vec::with_capacity(self.overlap_drift.len() + 1);
        m.push(params.m0);
        for (t, &u) in self.overlap_drift.iter().enumerate() {
            m.push(ridge * m[t] - u);
        }
        self.magnetization = m;
    }

    pub fn check_shapes(&self, horizon: usize) -> Result<()> {
        for found in [
            self.noise_cov.horizon(),
            self.memory.horizon(),
            self.local_response.len(),
            self.overlap_drift.len(),
        ] {
            if found != horizon {
                return Err(DmftError::HorizonMismatch {
                    expected: horizon,
                    found,
                });
            }
        }
        if !self.magnetization.is_empty() && self.magnetization.len() != horizon + 1 {
            return Err(DmftError::HorizonMismatch {
                expected: horizon + 1,
                found: self.magnetization.len(),
            });
        }
        Ok(())
    }

    /// Structural checks every emitted kernel set must pass: shapes, PSD noise
    /// covariance, strict causality and the magnetization recursion.
    pub fn check_invariants(&self, params: &ModelParams) -> Result<()> {
        self.check_shapes(params.horizon)?;
        let c = self.noise_cov.matrix();
        let scale = c.amax().max(1.0);
        let min_eig = self.noise_cov.min_eigenvalue();
        if min_eig < -1e-10 * scale {
            return Err(invalid(
                "noise_cov",
                format!("not PSD, smallest eigenvalue {min_eig:e}"),
            ));
        }
        if !self.memory.is_causal() {
            return Err(invalid("memory", "has entries on or above the diagonal"));
        }
        let ridge = params.ridge_factor();
        for t in 0..self.horizon() {
            let m = &self.magnetization;
            let gap = m[t + 1] - ridge * m[t] + self.overlap_drift[t];
            if gap.abs() > 1e-12 * (1.0 + m[t].abs()) {
                return Err(invalid(
                    "magnetization",
                    format!("recursion violated at t = {t} by {gap:e}"),
                ));
            }
        }
        Ok(())
    }

    /// `damping * proposal + (1 - damping) * self`, then the magnetization is
    /// rebuilt and the noise covariance projected back onto the PSD cone.
    pub fn damped_update(
        &self,
        proposal: &KernelSet,
        damping: f64,
        params: &ModelParams,
        psd_floor: f64,
    ) -> Result<KernelSet> {
        if !(damping > 0.0 && damping <= 1.0) {
            return Err(invalid("damping", format!("must lie in (0, 1], got {damping}")));
        }
        proposal.check_shapes(self.horizon())?;
        let keep = 1.0 - damping;
        let blend = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(o, n)| damping * n + keep * o).collect()
        };
        let noise = SymmetricKernel::new(
            proposal.noise_cov.matrix() * damping + self.noise_cov.matrix() * keep,
        )?;
        let memory =
            CausalKernel::new(proposal.memory.matrix() * damping + self.memory.matrix() * keep)?;
        let mut out = KernelSet {
            noise_cov: psd_project(&noise, psd_floor)?,
            memory,
            local_response: blend(&self.local_response, &proposal.local_response),
            overlap_drift: blend(&self.overlap_drift, &proposal.overlap_drift),
            magnetization: Vec::new(),
        };
        out.rebuild_magnetization(params);
        Ok(out)
    }

    /// Largest block-wise relative change between two kernel sets.
    ///
    /// Each of `C_g`, `R_g`, `Γ`, `υ` contributes
    /// `max |new - old| / max(max |old|, 1e-6)`.
    pub fn relative_change(&self, old: &KernelSet) -> f64 {
        fn block(new: &[f64], old: &[f64]) -> f64 {
            let diff = new
                .iter()
                .zip(old)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let scale = old.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-6);
            diff / scale
        }
        [
            block(self.noise_cov.matrix().as_slice(), old.noise_cov.matrix().as_slice()),
            block(self.memory.matrix().as_slice(), old.memory.matrix().as_slice()),
            block(&self.local_response, &old.local_response),
            block(&self.overlap_drift, &old.overlap_drift),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// JSON form of a kernel set. Matrices are stored row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelFile {
    pub horizon: usize,
    pub noise_cov: Vec<f64>,
    pub memory: Vec<f64>,
    pub local_response: Vec<f64>,
    pub overlap_drift: Vec<f64>,
    pub magnetization: Vec<f64>,
    pub params: ModelParams,
    #[serde(default)]
    pub trace: Vec<f64>,
    #[serde(default)]
    pub converged: bool,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(t: usize, entries: &[f64], name: &str) -> Result<DMatrix<f64>> {
    if entries.len() != t * t {
        return Err(DmftError::Shape(format!(
            "{name}: expected {} entries, found {}",
            t * t,
            entries.len()
        )));
    }
    Ok(DMatrix::from_row_slice(t, t, entries))
}

impl KernelFile {
    pub fn new(kernels: &KernelSet, params: &ModelParams, trace: &[f64], converged: bool) -> Self {
        Self {
            horizon: kernels.horizon(),
            noise_cov: row_major(kernels.noise_cov.matrix()),
            memory: row_major(kernels.memory.matrix()),
            local_response: kernels.local_response.clone(),
            overlap_drift: kernels.overlap_drift.clone(),
            magnetization: kernels.magnetization.clone(),
            params: params.clone(),
            trace: trace.to_vec(),
            converged,
        }
    }

    /// Rebuilds the kernel set. The stored magnetization is rederived from
    /// the drift rather than trusted.
    pub fn kernels(&self) -> Result<KernelSet> {
        let t = self.horizon;
        if self.params.horizon != t {
            return Err(DmftError::HorizonMismatch {
                expected: t,
                found: self.params.horizon,
            });
        }
        KernelSet::from_parts(
            &self.params,
            SymmetricKernel::new(from_row_major(t, &self.noise_cov, "noise_cov")?)?,
            CausalKernel::new(from_row_major(t, &self.memory, "memory")?)?,
            self.local_response.clone(),
            self.overlap_drift.clone(),
        )
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n")
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
