//! Damped Monte Carlo fixed-point iteration for the kernels, and the
//! post-convergence weight process that yields `C_θ(t,t)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effective::{EffectivePath, EffectiveSampler, Ensemble, Perturbation};
use crate::error::{invalid, DmftError, Result};
use crate::kernels::KernelSet;
use crate::numerics::{
    cholesky_factor, derive_seed, pairwise_reduce, psd_project, standard_normal, CausalKernel,
    Purpose, RngStream, SymmetricKernel,
};
use crate::params::ModelParams;

/// Paths per reduction chunk. Fixed so results do not depend on thread count.
const CHUNK: usize = 512;
const THETA_SALT: u64 = 0x0074_6865_7461;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub n_paths: usize,
    /// Weight on the new estimate in each sweep.
    pub damping: f64,
    pub max_sweeps: usize,
    pub tol: f64,
    pub seed: u64,
    pub psd_floor: f64,
    /// Draw fresh paths every sweep. When false every sweep reuses the same
    /// draws and the iteration becomes a deterministic map.
    pub resample_each_sweep: bool,
    /// Paths used for the weight process after convergence.
    pub theta_paths: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_paths: 2500,
            damping: 0.7,
            max_sweeps: 100,
            tol: 1e-3,
            seed: 0,
            psd_floor: 0.0,
            resample_each_sweep: true,
            theta_paths: 20_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(invalid(
                "damping",
                format!("must lie in (0, 1], got {}", self.damping),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol", format!("must be > 0, got {}", self.tol)));
        }
        if self.n_paths < 100 {
            return Err(invalid(
                "n_paths",
                format!("must be >= 100, got {}", self.n_paths),
            ));
        }
        if self.theta_paths == 0 {
            return Err(invalid("theta_paths", "must be positive"));
        }
        if !(self.psd_floor >= 0.0) {
            return Err(invalid("psd_floor", "must be >= 0"));
        }
        Ok(())
    }
}

/// Result of [`solve_fixed_point`]. Running out of sweeps is reported through
/// `converged`, not as an error.
#[derive(Debug, Clone)]
pub struct Solution {
    pub kernels: KernelSet,
    /// Relative kernel change after each sweep.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

/// Per-time observables predicted by the theory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurveTable {
    pub t: Vec<usize>,
    pub m: Vec<f64>,
    pub c_theta: Vec<f64>,
    pub cosine: Vec<f64>,
}

impl CurveTable {
    pub fn from_series(m: Vec<f64>, c_theta: Vec<f64>) -> Self {
        let cosine = m
            .iter()
            .zip(&c_theta)
            .map(|(&m, &c)| if c > 0.0 { m / c.sqrt() } else { 0.0 })
            .collect();
        Self {
            t: (0..m.len()).collect(),
            m,
            c_theta,
            cosine,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

// ── Kernel estimation ──────────────────────────────────────────────

/// Running sums behind one kernel estimate.
#[derive(Debug, Clone)]
struct KernelAccumulator {
    horizon: usize,
    count: usize,
    cov: DMatrix<f64>,
    memory: DMatrix<f64>,
    local: Vec<f64>,
    drift: Vec<f64>,
    // scratch
    grad: Vec<f64>,
    curv: Vec<f64>,
}

impl KernelAccumulator {
    fn new(horizon: usize) -> Self {
        Self {
            horizon,
            count: 0,
            cov: DMatrix::zeros(horizon, horizon),
            memory: DMatrix::zeros(horizon, horizon),
            local: vec![0.0; horizon],
            drift: vec![0.0; horizon],
            grad: vec![0.0; horizon],
            curv: vec![0.0; horizon],
        }
    }

    fn add(&mut self, path: &EffectivePath) {
        let n = self.horizon;
        for t in 0..n {
            self.grad[t] = path.mask[t] * path.loss_first[t];
            self.curv[t] = path.mask[t] * path.loss_second[t];
        }
        for t in 0..n {
            let g = self.grad[t];
            let c = self.curv[t];
            self.local[t] += c;
            self.drift[t] += g * path.eta_star;
            for s in 0..=t {
                self.cov[(t, s)] += g * self.grad[s];
            }
            if c != 0.0 {
                for s in 0..t {
                    self.memory[(t, s)] += c * self.curv[s] * path.jac(t, s);
                }
            }
        }
        self.count += 1;
    }

    fn merge(mut self, other: Self) -> Self {
        self.count += other.count;
        self.cov += other.cov;
        self.memory += other.memory;
        for t in 0..self.horizon {
            self.local[t] += other.local[t];
            self.drift[t] += other.drift[t];
        }
        self
    }

    fn finish(self, params: &ModelParams) -> Result<KernelSet> {
        if self.count == 0 {
            return Err(DmftError::EmptyEnsemble);
        }
        let n = self.horizon;
        let inv = 1.0 / self.count as f64;
        let a = params.alpha;
        let g = params.effective_gamma();
        let mut cov = DMatrix::from_fn(n, n, |t, s| {
            let (hi, lo) = if s > t { (s, t) } else { (t, s) };
            a * g * g * self.cov[(hi, lo)] * inv
        });
        for t in 0..n {
            cov[(t, t)] += params.langevin_variance();
        }
        let memory = self.memory * (a * g * g * inv);
        KernelSet::from_parts(
            params,
            SymmetricKernel::new(cov)?,
            CausalKernel::new(memory)?,
            self.local.iter().map(|x| -a * g * x * inv).collect(),
            self.drift.iter().map(|x| a * g * x * inv).collect(),
        )
    }
}

/// Empirical kernel proposal from an ensemble:
///
/// * `C_g(t,s) = α γ_g² ⟨s^t l'^t s^s l'^s⟩ + γ² T δ_{ts}`
/// * `R_g(t,s) = α γ_g² ⟨s^t l''^t s^s l''^s ∂η^t/∂u^s⟩`, `s < t`
/// * `Γ^t = -α γ_g ⟨s^t l''^t⟩`
/// * `υ^t = α γ_g ⟨s^t l'^t η*⟩`
///
/// The memory kernel is the response of `-α γ_g s^t l'^t` to a unit shift of
/// the loss argument at time `s`, which moves `η^{s+1}` by `-γ_g s^s l''^s`.
pub fn estimate_kernels(ensemble: &Ensemble, params: &ModelParams) -> Result<KernelSet> {
    if ensemble.is_empty() {
        return Err(DmftError::EmptyEnsemble);
    }
    if ensemble.horizon() != params.horizon {
        return Err(DmftError::HorizonMismatch {
            expected: params.horizon,
            found: ensemble.horizon(),
        });
    }
    let parts: Vec<KernelAccumulator> = ensemble
        .paths
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = KernelAccumulator::new(params.horizon);
            chunk.iter().for_each(|p| acc.add(p));
            acc
        })
        .collect();
    pairwise_reduce(parts, KernelAccumulator::merge)
        .ok_or(DmftError::EmptyEnsemble)?
        .finish(params)
}

/// Simulates and reduces `n_paths` paths chunk by chunk without keeping them.
fn sweep_proposal(
    params: &ModelParams,
    kernels: &KernelSet,
    n_paths: usize,
    seed: u64,
) -> Result<KernelSet> {
    let sampler = EffectiveSampler::new(params, kernels)?;
    let chunks = n_paths.div_ceil(CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = KernelAccumulator::new(params.horizon);
            let end = ((c + 1) * CHUNK).min(n_paths);
            for i in c * CHUNK..end {
                acc.add(&sampler.path(seed, i as u64, Perturbation::None)?);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    pairwise_reduce(parts, KernelAccumulator::merge)
        .ok_or(DmftError::EmptyEnsemble)?
        .finish(params)
}

/// Kernel proposal from a fresh ensemble of `n_paths` paths, reduced in a
/// fixed order. Equivalent to [`estimate_kernels`] on the same paths.
pub fn estimate_from_draws(
    params: &ModelParams,
    kernels: &KernelSet,
    n_paths: usize,
    seed: u64,
) -> Result<KernelSet> {
    if n_paths == 0 {
        return Err(DmftError::EmptyEnsemble);
    }
    sweep_proposal(params, kernels, n_paths, seed)
}

// ── Fixed point ────────────────────────────────────────────────────

/// Runs the damped iteration from the memory-free kernels.
pub fn solve_fixed_point(params: &ModelParams, config: &SolverConfig) -> Result<Solution> {
    solve_from(params, config, KernelSet::initial(params), |_, _, _| {})
}

/// Like [`solve_fixed_point`] but starting from `start` and calling
/// `observe(sweep, kernels, change)` after every sweep.
pub fn solve_from<F>(
    params: &ModelParams,
    config: &SolverConfig,
    start: KernelSet,
    mut observe: F,
) -> Result<Solution>
where
    F: FnMut(usize, &KernelSet, f64),
{
    params.validate()?;
    config.validate()?;
    start.check_shapes(params.horizon)?;
    let mut current = start;
    current.rebuild_magnetization(params);
    let mut trace = Vec::new();
    let mut converged = false;
    for sweep in 0..config.max_sweeps {
        let seed = if config.resample_each_sweep {
            derive_seed(config.seed, sweep as u64)
        } else {
            config.seed
        };
        let proposal = sweep_proposal(params, &current, config.n_paths, seed)?;
        let next = current.damped_update(&proposal, config.damping, params, config.psd_floor)?;
        next.check_invariants(params)?;
        let change = next.relative_change(&current);
        trace.push(change);
        current = next;
        observe(sweep, &current, change);
        if change < config.tol {
            converged = true;
            break;
        }
    }
    Ok(Solution {
        sweeps: trace.len(),
        kernels: current,
        trace,
        converged,
    })
}

// ── Weight process ─────────────────────────────────────────────────

/// Paths of the teacher-orthogonal weight coordinate,
///
/// ```text
/// θ^{t+1} = (1 - γλ + Γ^t) θ^t + Σ_{k<t} R_g(t,k) θ^k + u^t,
/// ```
///
/// as an `n x (T+1)` matrix. The initial draws are rescaled so their
/// empirical second moment is exactly `c0 - m0²`.
fn weight_paths(
    kernels: &KernelSet,
    params: &ModelParams,
    n_paths: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    params.validate()?;
    kernels.check_shapes(params.horizon)?;
    if n_paths == 0 {
        return Err(DmftError::EmptyEnsemble);
    }
    let horizon = params.horizon;
    let factor = cholesky_factor(&psd_project(&kernels.noise_cov, 0.0)?)?;
    let mut start: Vec<f64> = (0..n_paths as u64)
        .map(|i| standard_normal(&mut RngStream::new(seed, i, Purpose::Init).rng()))
        .collect();
    let var = params.orthogonal_variance();
    let second: f64 = start.iter().map(|x| x * x).sum::<f64>() / n_paths as f64;
    let scale = if second > 0.0 { (var / second).sqrt() } else { 0.0 };
    start.iter_mut().for_each(|x| *x *= scale);

    let ridge = params.ridge_factor();
    let memory = kernels.memory.matrix();
    let rows = start
        .par_iter()
        .enumerate()
        .map(|(i, &theta0)| {
            let mut u = vec![0.0; horizon];
            crate::numerics::correlated_draw(
                &factor,
                &mut RngStream::new(seed, i as u64, Purpose::Noise).rng(),
                &mut u,
            );
            let mut theta = vec![0.0; horizon + 1];
            theta[0] = theta0;
            for t in 0..horizon {
                let mut next = (ridge + kernels.local_response[t]) * theta[t] + u[t];
                for k in 0..t {
                    next += memory[(t, k)] * theta[k];
                }
                if !next.is_finite() || next.abs() > crate::effective::DIVERGENCE_BOUND {
                    return Err(DmftError::Diverged {
                        step: t + 1,
                        value: next.abs(),
                    });
                }
                theta[t + 1] = next;
            }
            Ok(theta)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(n_paths, horizon + 1, |i, t| rows[i][t]))
}

/// `C_θ(t,t)` for `t = 0..=T`: orthogonal second moment plus `(m^t)²`.
pub fn sample_weight_process(
    kernels: &KernelSet,
    params: &ModelParams,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let paths = weight_paths(kernels, params, n_paths, seed)?;
    let n = n_paths as f64;
    Ok((0..=params.horizon)
        .map(|t| {
            let col: Vec<f64> = paths.column(t).iter().map(|x| x * x).collect();
            crate::numerics::pairwise_sum(&col) / n + kernels.magnetization[t].powi(2)
        })
        .collect())
}

/// Full `C_θ(t,s)`, `(T+1) x (T+1)`; diagnostic only.
pub fn weight_covariance(
    kernels: &KernelSet,
    params: &ModelParams,
    n_paths: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let paths = weight_paths(kernels, params, n_paths, seed)?;
    let m = &kernels.magnetization;
    let mut c = paths.transpose() * &paths / n_paths as f64;
    for t in 0..c.nrows() {
        for s in 0..c.ncols() {
            c[(t, s)] += m[t] * m[s];
        }
    }
    Ok(c)
}

/// Magnetization, `C_θ(t,t)` and cosine similarity per step.
pub fn theory_curves(
    kernels: &KernelSet,
    params: &ModelParams,
    config: &SolverConfig,
) -> Result<CurveTable> {
    let c = sample_weight_process(
        kernels,
        params,
        config.theta_paths,
        derive_seed(config.seed, THETA_SALT),
    )?;
    Ok(CurveTable::from_series(kernels.magnetization.clone(), c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effective::simulate_paths;
    use crate::params::MaskMode;

    fn quick(seed: u64) -> SolverConfig {
        SolverConfig {
            n_paths: 400,
            max_sweeps: 30,
            seed,
            theta_paths: 2000,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn zero_step_size_converges_immediately() {
        let p = ModelParams::new(3.0, 0.0, 0.5, 1.0, 5).with_m0(0.2);
        let sol = solve_fixed_point(&p, &quick(1)).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.sweeps, 1);
        assert!(sol.kernels.noise_cov.matrix().iter().all(|&x| x == 0.0));
        assert!(sol.kernels.magnetization.iter().all(|&m| m == 0.2));
        let curves = theory_curves(&sol.kernels, &p, &quick(1)).unwrap();
        for c in &curves.c_theta {
            assert!((c - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_off_masks_leave_only_ridge() {
        let p = ModelParams::new(3.0, 0.1, 0.5, 0.5, 10)
            .with_m0(0.2)
            .with_mask_mode(MaskMode::AllOff);
        let sol = solve_fixed_point(&p, &quick(3)).unwrap();
        for (t, m) in sol.kernels.magnetization.iter().enumerate() {
            assert!((m - 0.2 * 0.95f64.powi(t as i32)).abs() <= 1e-10);
        }
        let c = sample_weight_process(&sol.kernels, &p, 500, 9).unwrap();
        for (t, c) in c.iter().enumerate() {
            assert!((c - 0.95f64.powi(2 * t as i32)).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn local_response_matches_direct_average() {
        let p = ModelParams::new(0.9, 0.04, 1.0, 0.2, 6);
        let k = KernelSet::initial(&p);
        let e = simulate_paths(&p, &k, 1500, RngStream::new(4, 0, Purpose::Noise)).unwrap();
        let est = estimate_kernels(&e, &p).unwrap();
        let g = p.effective_gamma();
        for t in 0..6 {
            let direct: f64 = e
                .paths
                .iter()
                .map(|q| q.mask[t] * q.loss_second[t])
                .sum::<f64>()
                / e.len() as f64;
            let want = -p.alpha * g * direct;
            assert!((est.local_response[t] - want).abs() <= 1e-12 * want.abs().max(1e-300));
        }
    }

    #[test]
    fn streamed_and_stored_estimates_agree() {
        let p = ModelParams::new(3.0, 0.1, 0.5, 0.5, 5).with_m0(0.2);
        let k = KernelSet::initial(&p);
        let e = simulate_paths(&p, &k, 1300, RngStream::new(11, 0, Purpose::Noise)).unwrap();
        let a = estimate_kernels(&e, &p).unwrap();
        let b = estimate_from_draws(&p, &k, 1300, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_noise_iteration_contracts() {
        let p = ModelParams::new(3.0, 0.1, 0.5, 1.0, 8).with_m0(0.2);
        let cfg = SolverConfig {
            resample_each_sweep: false,
            tol: 1e-8,
            ..quick(5)
        };
        let sol = solve_fixed_point(&p, &cfg).unwrap();
        assert!(sol.converged, "{:?}", sol.trace);
        assert!(sol.trace.iter().all(|x| x.is_finite()));
        assert!(*sol.trace.last().unwrap() < 1e-8);
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::default();
        c.validate().unwrap();
        c.damping = 0.0;
        assert!(c.validate().is_err());
        let c = SolverConfig {
            n_paths: 50,
            ..SolverConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_ensemble_rejected() {
        let p = ModelParams::new(3.0, 0.1, 0.5, 1.0, 3);
        let e = Ensemble {
            paths: vec![],
            magnetization: vec![0.0; 4],
        };
        assert!(matches!(
            estimate_kernels(&e, &p),
            Err(DmftError::EmptyEnsemble)
        ));
    }

    #[test]
    fn zero_magnetization_gives_zero_cosine() {
        let c = CurveTable::from_series(vec![0.0; 4], vec![1.0, 0.9, 0.8, 0.7]);
        assert!(c.cosine.iter().all(|&x| x == 0.0));
    }
}
