//! The abstract increment dynamics
//!
//! ```text
//! v^{t+1} = h^t(v^0, ..., v^t) + Xᵀ g^t(r^t),   r^t = X Σ_{k≤t} v^k
//! ```
//!
//! with `v^t` of width `q ∈ {1, 2}`, and the maps that rewrite SGD,
//! heavy ball and Nesterov in this form.

use nalgebra::{DMatrix, DVector};

use super::{batch_mask, Dataset, NesterovSchedule};
use crate::error::{DmftError, Result};
use crate::loss::ScalarLoss;
use crate::params::ModelParams;

type HistoryFn<'a> = Box<dyn FnMut(usize, &[DMatrix<f64>]) -> DMatrix<f64> + 'a>;
type DataFn<'a> = Box<dyn FnMut(usize, &DMatrix<f64>) -> DMatrix<f64> + 'a>;

/// An algorithm written as an `(h, g, v^0)` triple.
pub struct Mapping<'a> {
    pub h: HistoryFn<'a>,
    pub g: DataFn<'a>,
    pub v0: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenericRun {
    /// `v^0 ..= v^T`.
    pub increments: Vec<DMatrix<f64>>,
    /// Running sums `x^t = Σ_{k≤t} v^k`.
    pub iterates: Vec<DMatrix<f64>>,
}

impl GenericRun {
    /// Column `col` of every iterate.
    pub fn column(&self, col: usize) -> Vec<DVector<f64>> {
        self.iterates
            .iter()
            .map(|x| x.column(col).into_owned())
            .collect()
    }
}

pub fn run_generic_dynamics<H, G>(
    mut h: H,
    mut g: G,
    data: &Dataset,
    v0: DMatrix<f64>,
    steps: usize,
) -> Result<GenericRun>
where
    H: FnMut(usize, &[DMatrix<f64>]) -> DMatrix<f64>,
    G: FnMut(usize, &DMatrix<f64>) -> DMatrix<f64>,
{
    let (d, q) = v0.shape();
    if d != data.d() {
        return Err(DmftError::Shape(format!(
            "v0 has {d} rows, data has d = {}",
            data.d()
        )));
    }
    if !(1..=2).contains(&q) {
        return Err(DmftError::Shape(format!("width q = {q} not in {{1, 2}}")));
    }
    let mut increments = vec![v0.clone()];
    let mut iterates = vec![v0];
    for t in 0..steps {
        let x = &iterates[t];
        let r = &data.x * x;
        let gt = g(t, &r);
        if gt.shape() != (data.n(), q) {
            return Err(DmftError::Shape(format!(
                "g returned {:?}, expected ({}, {q})",
                gt.shape(),
                data.n()
            )));
        }
        let ht = h(t, &increments);
        if ht.shape() != (d, q) {
            return Err(DmftError::Shape(format!(
                "h returned {:?}, expected ({d}, {q})",
                ht.shape()
            )));
        }
        let v = ht + data.x.tr_mul(&gt);
        let next = x + &v;
        increments.push(v);
        iterates.push(next);
    }
    Ok(GenericRun {
        increments,
        iterates,
    })
}

fn sum(history: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut total = history[0].clone();
    for v in &history[1..] {
        total += v;
    }
    total
}

/// `g^t = -γ_g s^t ⊙ l'(r)`, `h^t = -γ λ Σ v`, masks from the same streams
/// as [`super::run_sgd`].
pub fn sgd_mapping<'a>(
    data: &'a Dataset,
    params: &'a ModelParams,
    w0: &DVector<f64>,
    seed: u64,
) -> Mapping<'a> {
    let ridge = params.gamma * params.lambda;
    let gamma_g = params.effective_gamma();
    Mapping {
        h: Box::new(move |_, hist| sum(hist) * -ridge),
        g: Box::new(move |t, r| {
            let mask = batch_mask(data.n(), params, seed, t);
            DMatrix::from_fn(data.n(), 1, |i, _| {
                -gamma_g * mask[i] * params.loss.first(r[(i, 0)], data.y[i])
            })
        }),
        v0: DMatrix::from_column_slice(w0.len(), 1, w0.as_slice()),
    }
}

/// `g^t = -γ l'(r)`, `h^t = -γ λ Σ v + β v^t`. The momentum term is
/// dropped at `t = 0`, where `v^0 = w^0` is a position rather than a velocity.
pub fn polyak_mapping<'a>(
    data: &'a Dataset,
    params: &'a ModelParams,
    beta: f64,
    w0: &DVector<f64>,
) -> Mapping<'a> {
    let ridge = params.gamma * params.lambda;
    let gamma = params.gamma;
    Mapping {
        h: Box::new(move |t, hist| {
            let mut out = sum(hist) * -ridge;
            if t >= 1 {
                out += &hist[t] * beta;
            }
            out
        }),
        g: Box::new(move |_, r| {
            DMatrix::from_fn(data.n(), 1, |i, _| {
                -gamma * params.loss.first(r[(i, 0)], data.y[i])
            })
        }),
        v0: DMatrix::from_column_slice(w0.len(), 1, w0.as_slice()),
    }
}

/// Two-column form of Nesterov's method, `x = [w | z]`, `z^0 = w^0`:
///
/// ```text
/// h^t = [x (-τ, τ)ᵀ | x (μ(1-τ), μ(τ-1))ᵀ] + [-γ^t ∇F(x (1-τ, τ)ᵀ) | -α^t ∇F(·)]
/// g^t = [-γ^t l'(r (1-τ, τ)ᵀ) | -α^t l'(·)]
/// ```
pub fn nesterov_mapping<'a>(
    data: &'a Dataset,
    params: &'a ModelParams,
    schedule: &'a NesterovSchedule,
    w0: &DVector<f64>,
) -> Mapping<'a> {
    let lambda = params.lambda;
    Mapping {
        h: Box::new(move |t, hist| {
            let x = sum(hist);
            let (tau, g, mu, a) = (
                schedule.tau[t],
                schedule.gamma[t],
                schedule.mu[t],
                schedule.alpha[t],
            );
            let w = x.column(0);
            let z = x.column(1);
            let y = w * (1.0 - tau) + z * tau;
            let grad_f = &y * lambda;
            let first = (z - w) * tau - &grad_f * g;
            let second = (w * (mu * (1.0 - tau)) + z * (mu * (tau - 1.0))) - &grad_f * a;
            DMatrix::from_columns(&[first, second])
        }),
        g: Box::new(move |t, r| {
            let tau = schedule.tau[t];
            let (g, a) = (schedule.gamma[t], schedule.alpha[t]);
            let n = data.n();
            let lp = DVector::from_fn(n, |i, _| {
                let ry = r[(i, 0)] * (1.0 - tau) + r[(i, 1)] * tau;
                params.loss.first(ry, data.y[i])
            });
            DMatrix::from_columns(&[&lp * -g, &lp * -a])
        }),
        v0: DMatrix::from_columns(&[w0.clone(), w0.clone()]),
    }
}
