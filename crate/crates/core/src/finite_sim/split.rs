use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, DmftError, Result};
use crate::numerics::{standard_normal, Purpose, RngStream};

/// Per-step statistics of a sample-splitting run.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRun {
    /// Per-coordinate second moment `‖w^t‖² / d`.
    pub rho_hat: Vec<f64>,
    /// Per-coordinate first absolute moment `Σ|w_i^t| / d`.
    pub mean_abs: Vec<f64>,
}

/// Gradient descent with a fresh `n x d` matrix `A^t` (entries `N(0, 1/d)`,
/// stream `(seed, t, Data)`) at every step:
/// `w ← w - γ^t (A^t)ᵀ f'(A^t w)`. `w^0` has i.i.d. `N(0, rho0)` entries.
pub fn run_sample_split_gd<F>(
    f_prime: F,
    gamma: &[f64],
    n: usize,
    d: usize,
    rho0: f64,
    seed: u64,
) -> Result<SplitRun>
where
    F: Fn(f64) -> f64,
{
    if n == 0 || d == 0 {
        return Err(invalid("n, d", "must be >= 1"));
    }
    if !(rho0 >= 0.0) {
        return Err(invalid("rho0", format!("must be >= 0, got {rho0}")));
    }
    let df = d as f64;
    let mut rng = RngStream::new(seed, 0, Purpose::Init).rng();
    let mut w = DVector::from_fn(d, |_, _| rho0.sqrt() * standard_normal(&mut rng));
    let stats = |w: &DVector<f64>| (w.norm_squared() / df, w.abs().sum() / df);
    let (r, a) = stats(&w);
    let mut out = SplitRun {
        rho_hat: vec![r],
        mean_abs: vec![a],
    };
    let scale = 1.0 / df.sqrt();
    for (t, &g) in gamma.iter().enumerate() {
        let mut rng = RngStream::new(seed, t as u64, Purpose::Data).rng();
        let mut a = DMatrix::zeros(n, d);
        for mu in 0..n {
            for i in 0..d {
                a[(mu, i)] = scale * standard_normal(&mut rng);
            }
        }
        let z = (&a * &w).map(&f_prime);
        w -= a.tr_mul(&z) * g;
        let (r, m) = stats(&w);
        if !r.is_finite() || r.sqrt() > super::DIVERGENCE_BOUND {
            return Err(DmftError::Diverged {
                step: t + 1,
                value: r.sqrt(),
            });
        }
        out.rho_hat.push(r);
        out.mean_abs.push(m);
    }
    Ok(out)
}
