//! Finite-dimensional ground truth: synthetic data and exact runs of SGD,
//! Langevin, heavy-ball, Nesterov, sample-splitting GD and the abstract
//! increment dynamics they all map onto.
//!
//! Iterates live at the scale where pre-activations `X w` are `O(1)`: with
//! `X` entries of variance `1/d`, the weight entries are `O(1)`. Reported
//! observables are per-coordinate, `C = ‖w‖² / d`, and `m` is the overlap
//! with the unit teacher direction, `m = w·w* / (√d ‖w*‖)`, so that
//! `cos = m / √C`.
//!
//! Random draws are keyed by `(seed, step, purpose)`: masks use
//! `BatchMask`, Langevin noise `Noise`, initial weights `Init`.

mod dataset;
mod generic;
mod split;

pub use dataset::{generate_dataset, Dataset};
pub use generic::{
    nesterov_mapping, polyak_mapping, run_generic_dynamics, sgd_mapping, GenericRun, Mapping,
};
pub use split::{run_sample_split_gd, SplitRun};

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DmftError, Result};
use crate::loss::{LossSpec, ScalarLoss};
use crate::numerics::{standard_normal, Purpose, RngStream};
use crate::params::{MaskMode, ModelParams};

/// Normalized weight norms beyond this count as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e8;

/// How `w^0` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// i.i.d. entries with second moment `c0`.
    #[default]
    Random,
    /// Overlap exactly `m0` with the teacher and norm exactly `c0`.
    Aligned,
}

/// Step sizes of Nesterov's three-sequence method, one entry per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NesterovSchedule {
    pub tau: Vec<f64>,
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl NesterovSchedule {
    pub fn constant(tau: f64, gamma: f64, mu: f64, alpha: f64, steps: usize) -> Self {
        Self {
            tau: vec![tau; steps],
            gamma: vec![gamma; steps],
            mu: vec![mu; steps],
            alpha: vec![alpha; steps],
        }
    }

    fn check(&self, steps: usize) -> Result<()> {
        for (name, v) in [
            ("tau", &self.tau),
            ("gamma", &self.gamma),
            ("mu", &self.mu),
            ("alpha", &self.alpha),
        ] {
            if v.len() < steps {
                return Err(DmftError::Shape(format!(
                    "nesterov schedule `{name}` has {} entries, need {steps}",
                    v.len()
                )));
            }
        }
        Ok(())
    }
}

/// Which finite-d algorithm to run. Shared constants (`γ`, `λ`, `b`,
/// temperature, loss) come from [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum AlgorithmSpec {
    Sgd,
    Langevin,
    Polyak { beta: f64 },
    Nesterov(NesterovSchedule),
}

/// Per-step observables, `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimObservables {
    pub m: Vec<f64>,
    pub c: Vec<f64>,
    pub cosine: Vec<f64>,
    /// Mean per-sample training loss, regularizer excluded.
    pub loss: Vec<f64>,
}

impl SimObservables {
    fn record(&mut self, data: &Dataset, loss: &LossSpec, w: &DVector<f64>) {
        let d = data.d() as f64;
        let m = w.dot(&data.w_star) / (d.sqrt() * data.w_star.norm());
        let c = w.norm_squared() / d;
        let denom = c.sqrt();
        let r = &data.x * w;
        let l = r
            .iter()
            .zip(data.y.iter())
            .map(|(&r, &y)| loss.value(r, y))
            .sum::<f64>()
            / data.n() as f64;
        self.m.push(m);
        self.c.push(c);
        self.cosine.push(if denom > 0.0 { m / denom } else { 0.0 });
        self.loss.push(l);
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Observables plus the raw iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub observables: SimObservables,
    pub iterates: Vec<DVector<f64>>,
    /// Second sequence (`z` for Nesterov); empty otherwise.
    pub auxiliary: Vec<DVector<f64>>,
}

impl SimRun {
    fn new() -> Self {
        Self {
            observables: SimObservables::default(),
            iterates: Vec::new(),
            auxiliary: Vec::new(),
        }
    }

    fn push(&mut self, data: &Dataset, loss: &LossSpec, w: DVector<f64>) -> Result<()> {
        let norm = w.norm() / (data.d() as f64).sqrt();
        if !norm.is_finite() || norm > DIVERGENCE_BOUND {
            return Err(DmftError::Diverged {
                step: self.iterates.len(),
                value: norm,
            });
        }
        self.observables.record(data, loss, &w);
        self.iterates.push(w);
        Ok(())
    }
}

/// Initial weights at iterate scale, from `(seed, 0, Init)`.
pub fn initial_weights(
    data: &Dataset,
    params: &ModelParams,
    mode: InitMode,
    seed: u64,
) -> DVector<f64> {
    let d = data.d();
    let sd = (d as f64).sqrt();
    let mut rng = RngStream::new(seed, 0, Purpose::Init).rng();
    let z = DVector::from_fn(d, |_, _| standard_normal(&mut rng));
    match mode {
        InitMode::Random => z * params.c0.sqrt(),
        InitMode::Aligned => {
            let unit = data.w_star.normalize();
            let mut orth = &z - &unit * unit.dot(&z);
            let norm = orth.norm();
            if norm > 0.0 {
                orth *= params.orthogonal_variance().sqrt() / norm;
            }
            (unit * params.m0 + orth) * sd
        }
    }
}

/// Bernoulli(b) mask for `step`, from `(seed, step, BatchMask)`.
pub fn batch_mask(n: usize, params: &ModelParams, seed: u64, step: usize) -> Vec<f64> {
    match params.mask_mode {
        MaskMode::AllOff => vec![0.0; n],
        MaskMode::Bernoulli => {
            let mut rng = RngStream::new(seed, step as u64, Purpose::BatchMask).rng();
            (0..n)
                .map(|_| if rng.random::<f64>() < params.b { 1.0 } else { 0.0 })
                .collect()
        }
    }
}

/// Langevin noise for `step`, from `(seed, step, Noise)`.
pub fn langevin_noise(d: usize, seed: u64, step: usize) -> DVector<f64> {
    let mut rng = RngStream::new(seed, step as u64, Purpose::Noise).rng();
    DVector::from_fn(d, |_, _| standard_normal(&mut rng))
}

/// `Xᵀ (mask ⊙ l'(X p, y))`; a missing mask means every sample is used.
fn data_gradient(
    data: &Dataset,
    loss: &LossSpec,
    point: &DVector<f64>,
    mask: Option<&[f64]>,
) -> DVector<f64> {
    let r = &data.x * point;
    let mut lp = DVector::from_fn(data.n(), |i, _| loss.first(r[i], data.y[i]));
    if let Some(mask) = mask {
        for (v, s) in lp.iter_mut().zip(mask) {
            *v *= s;
        }
    }
    data.x.tr_mul(&lp)
}

/// `w - (γ_data Xᵀ(s ⊙ l') + γ λ w)`, shared by every first-order variant so
/// that their reductions to each other hold bit for bit.
fn descent_step(
    data: &Dataset,
    params: &ModelParams,
    w: &DVector<f64>,
    gamma_data: f64,
    mask: Option<&[f64]>,
) -> DVector<f64> {
    let grad = data_gradient(data, &params.loss, w, mask);
    let ridge = params.gamma * params.lambda;
    DVector::from_fn(w.len(), |i, _| w[i] - (gamma_data * grad[i] + ridge * w[i]))
}

fn check_run(data: &Dataset, params: &ModelParams, w0: &DVector<f64>) -> Result<()> {
    params.validate()?;
    if w0.len() != data.d() {
        return Err(DmftError::Shape(format!(
            "w0 has length {}, data has d = {}",
            w0.len(),
            data.d()
        )));
    }
    Ok(())
}

/// Mini-batch SGD, `w ← w - γ((1/b) Xᵀ(s ⊙ l'(Xw, y)) + λ w)`.
pub fn run_sgd(
    data: &Dataset,
    params: &ModelParams,
    w0: DVector<f64>,
    seed: u64,
) -> Result<SimRun> {
    check_run(data, params, &w0)?;
    let mut run = SimRun::new();
    let mut w = w0;
    for t in 0..params.horizon {
        let mask = batch_mask(data.n(), params, seed, t);
        let next = descent_step(data, params, &w, params.effective_gamma(), Some(&mask));
        run.push(data, &params.loss, std::mem::replace(&mut w, next))?;
    }
    run.push(data, &params.loss, w)?;
    Ok(run)
}

/// Full-batch gradient descent plus `γ √T z^t`.
pub fn run_langevin(
    data: &Dataset,
    params: &ModelParams,
    w0: DVector<f64>,
    seed: u64,
) -> Result<SimRun> {
    check_run(data, params, &w0)?;
    let mut run = SimRun::new();
    let mut w = w0;
    let kick = params.gamma * params.temperature.sqrt();
    for t in 0..params.horizon {
        let all_on = vec![1.0; data.n()];
        let mut next = descent_step(data, params, &w, params.gamma, Some(&all_on));
        if params.temperature > 0.0 {
            next += langevin_noise(data.d(), seed, t) * kick;
        }
        run.push(data, &params.loss, std::mem::replace(&mut w, next))?;
    }
    run.push(data, &params.loss, w)?;
    Ok(run)
}

/// Heavy ball, `w ← w - γ(Xᵀ l' + λ w) + β(w - w_prev)`. `w_prev` defaults to
/// `w0`, i.e. zero initial velocity.
pub fn run_polyak(
    data: &Dataset,
    params: &ModelParams,
    beta: f64,
    w0: DVector<f64>,
    w_prev: Option<DVector<f64>>,
) -> Result<SimRun> {
    check_run(data, params, &w0)?;
    if !(0.0..1.0).contains(&beta) {
        return Err(invalid("beta", format!("must lie in [0, 1), got {beta}")));
    }
    let mut prev = w_prev.unwrap_or_else(|| w0.clone());
    if prev.len() != w0.len() {
        return Err(DmftError::Shape("w_prev and w0 lengths differ".into()));
    }
    let mut run = SimRun::new();
    let mut w = w0;
    for _ in 0..params.horizon {
        let all_on = vec![1.0; data.n()];
        let mut next = descent_step(data, params, &w, params.gamma, Some(&all_on));
        next += (&w - &prev) * beta;
        prev = w.clone();
        run.push(data, &params.loss, std::mem::replace(&mut w, next))?;
    }
    run.push(data, &params.loss, w)?;
    Ok(run)
}

/// Nesterov's method with `z^0 = w^0`:
///
/// ```text
/// y = w + τ (z - w)
/// w ← y - γ^t ∇(y)
/// z ← z + μ^t (y - z) - α^t ∇(y)
/// ```
///
/// with `∇(y) = Xᵀ l'(X y) + λ y`. Observables follow `w`; the `z`
/// sequence is returned as `auxiliary`.
pub fn run_nesterov(
    data: &Dataset,
    params: &ModelParams,
    schedule: &NesterovSchedule,
    w0: DVector<f64>,
) -> Result<SimRun> {
    check_run(data, params, &w0)?;
    schedule.check(params.horizon)?;
    let mut run = SimRun::new();
    let mut z = w0.clone();
    let mut w = w0;
    for t in 0..params.horizon {
        let (tau, g, mu, a) = (
            schedule.tau[t],
            schedule.gamma[t],
            schedule.mu[t],
            schedule.alpha[t],
        );
        let y = &w + (&z - &w) * tau;
        let grad = data_gradient(data, &params.loss, &y, None) + &y * params.lambda;
        let w_next = &y - &grad * g;
        let z_next = &z + (&y - &z) * mu - &grad * a;
        run.auxiliary.push(std::mem::replace(&mut z, z_next));
        run.push(data, &params.loss, std::mem::replace(&mut w, w_next))?;
    }
    run.auxiliary.push(z);
    run.push(data, &params.loss, w)?;
    Ok(run)
}

/// Dispatches on `spec`. `seed` keys masks and Langevin noise.
pub fn run_algorithm(
    spec: &AlgorithmSpec,
    data: &Dataset,
    params: &ModelParams,
    w0: DVector<f64>,
    seed: u64,
) -> Result<SimRun> {
    match spec {
        AlgorithmSpec::Sgd => run_sgd(data, params, w0, seed),
        AlgorithmSpec::Langevin => run_langevin(data, params, w0, seed),
        AlgorithmSpec::Polyak { beta } => run_polyak(data, params, *beta, w0, None),
        AlgorithmSpec::Nesterov(s) => run_nesterov(data, params, s, w0),
    }
}
