//! Shared numerical machinery: keyed random streams, symmetric and causal
//! kernel containers, PSD repair, jittered Cholesky, correlated Gaussian path
//! sampling and Gauss–Hermite quadrature.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DmftError, Result};

/// Default Gauss–Hermite order. The tanh-type integrands used here have
/// complex poles near the real axis, which makes convergence slow: order 40
/// is only good to about `1e-7` at unit variance, order 120 to `1e-12`.
pub const DEFAULT_QUADRATURE_ORDER: usize = 120;

// ── Random streams ─────────────────────────────────────────────────

/// What a stream of draws is used for. Each purpose gets an independent
/// key so that, for example, adding mask draws never shifts noise draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Noise,
    Teacher,
    BatchMask,
    Init,
    Data,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Noise => 0x006e_6f69_7365,
            Purpose::Teacher => 0x0074_6561_6368_6572,
            Purpose::BatchMask => 0x6d61_736b,
            Purpose::Init => 0x696e_6974,
            Purpose::Data => 0x6461_7461,
        }
    }
}

/// A counter-based stream keyed by `(seed, path, purpose)`.
///
/// The generator for a given key is independent of how many other streams
/// were created before it, so per-path parallelism cannot change results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub path: u64,
    pub purpose: Purpose,
}

impl RngStream {
    pub fn new(seed: u64, path: u64, purpose: Purpose) -> Self {
        Self {
            seed,
            path,
            purpose,
        }
    }

    pub fn with_path(self, path: u64) -> Self {
        Self { path, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = self.seed ^ self.purpose.tag().rotate_left(17);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.path);
        rng
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed, e.g. one per solver sweep.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut state = seed ^ salt.wrapping_mul(0xd6e8_feb8_6659_fd93);
    splitmix64(&mut state)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

// ── Kernels ────────────────────────────────────────────────────────

/// Symmetric `T x T` kernel, e.g. the noise covariance of the effective process.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricKernel {
    entries: DMatrix<f64>,
}

impl SymmetricKernel {
    pub fn zeros(horizon: usize) -> Self {
        Self {
            entries: DMatrix::zeros(horizon, horizon),
        }
    }

    /// Accepts `entries` if square, finite and symmetric up to a relative
    /// `1e-12` gap; the stored matrix is exactly symmetrized.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(DmftError::Shape(format!(
                "symmetric kernel must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        check_finite(&entries)?;
        let scale = entries.amax().max(1.0);
        let n = entries.nrows();
        for t in 0..n {
            for s in 0..t {
                let gap = (entries[(t, s)] - entries[(s, t)]).abs();
                if gap > 1e-12 * scale {
                    return Err(DmftError::NotSymmetric {
                        row: t,
                        col: s,
                        gap,
                    });
                }
            }
        }
        Ok(Self {
            entries: symmetrize(entries),
        })
    }

    pub fn horizon(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.entries[(t, s)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.horizon() == 0 {
            return 0.0;
        }
        SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Adds `value` to every diagonal entry.
    pub fn add_diagonal(&mut self, value: f64) {
        for t in 0..self.horizon() {
            self.entries[(t, t)] += value;
        }
    }
}

/// Strictly lower-triangular `T x T` kernel; entry `(t, s)` is the response
/// at time `t` to a perturbation at an earlier time `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalKernel {
    entries: DMatrix<f64>,
}

impl CausalKernel {
    pub fn zeros(horizon: usize) -> Self {
        Self {
            entries: DMatrix::zeros(horizon, horizon),
        }
    }

    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(DmftError::Shape(format!(
                "causal kernel must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        check_finite(&entries)?;
        let n = entries.nrows();
        for t in 0..n {
            for s in t..n {
                if entries[(t, s)] != 0.0 {
                    return Err(DmftError::NotCausal { row: t, col: s });
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn horizon(&self) -> usize {
        self.entries.nrows()
    }

    /// Zero whenever `s >= t`.
    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.entries[(t, s)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn is_causal(&self) -> bool {
        let n = self.horizon();
        (0..n).all(|t| (t..n).all(|s| self.entries[(t, s)] == 0.0))
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for row in 0..m.nrows() {
        for col in 0..m.ncols() {
            let value = m[(row, col)];
            if !value.is_finite() {
                return Err(DmftError::NonFinite { row, col, value });
            }
        }
    }
    Ok(())
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

// ── PSD repair and factorization ───────────────────────────────────

/// Clips the spectrum of `kernel` from below at `floor`.
///
/// Inputs whose smallest eigenvalue already sits at or above the floor are
/// returned untouched, so exact inputs stay exact.
pub fn psd_project(kernel: &SymmetricKernel, floor: f64) -> Result<SymmetricKernel> {
    if !(floor >= 0.0) {
        return Err(invalid("psd_floor", format!("must be >= 0, got {floor}")));
    }
    check_finite(kernel.matrix())?;
    if kernel.horizon() == 0 {
        return Ok(kernel.clone());
    }
    let eig = SymmetricEigen::new(kernel.matrix().clone());
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return Ok(kernel.clone());
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    Ok(SymmetricKernel {
        entries: symmetrize(rebuilt),
    })
}

/// Jitter levels tried, as multiples of `trace / T`.
fn jitter_ladder() -> Vec<f64> {
    let mut ladder = vec![0.0];
    let mut level = 1e-12;
    while level <= 1e-6 * (1.0 + 1e-9) {
        ladder.push(level);
        level *= 2.0;
    }
    ladder
}

/// Lower Cholesky factor of a PSD kernel.
///
/// Rank-deficient inputs get diagonal jitter from a ladder starting at
/// `1e-12 * trace / T` and doubling up to `1e-6 * trace / T`. The zero
/// matrix factors to the zero matrix.
pub fn cholesky_factor(kernel: &SymmetricKernel) -> Result<DMatrix<f64>> {
    let n = kernel.horizon();
    let k = kernel.matrix();
    check_finite(k)?;
    if k.iter().all(|&x| x == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    let scale = kernel.trace().max(0.0) / n as f64;
    let ladder: Vec<f64> = jitter_ladder().into_iter().map(|j| j * scale).collect();
    for &jitter in &ladder {
        let mut shifted = k.clone();
        for t in 0..n {
            shifted[(t, t)] += jitter;
        }
        if let Some(chol) = nalgebra::Cholesky::new(shifted) {
            return Ok(chol.l());
        }
    }
    Err(DmftError::Cholesky { ladder })
}

/// Fills `out` with `L z`, `z` standard normal drawn from `rng`.
pub fn correlated_draw<R: Rng + ?Sized>(factor: &DMatrix<f64>, rng: &mut R, out: &mut [f64]) {
    let n = factor.nrows();
    debug_assert_eq!(out.len(), n);
    let z: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
    for (t, slot) in out.iter_mut().enumerate() {
        let row = factor.row(t);
        *slot = (0..=t).map(|s| row[s] * z[s]).sum();
    }
}

/// Draws `n_paths` rows `L z`. Row `i` uses the stream at path index
/// `stream.path + i`, so any row split across workers gives the same output.
pub fn sample_correlated_paths(
    factor: &DMatrix<f64>,
    n_paths: usize,
    stream: RngStream,
) -> Result<DMatrix<f64>> {
    if n_paths == 0 {
        return Err(invalid("n_paths", "must be positive"));
    }
    if factor.nrows() != factor.ncols() {
        return Err(DmftError::Shape("factor must be square".into()));
    }
    let horizon = factor.nrows();
    let rows: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.with_path(stream.path + i as u64).rng();
            let mut row = vec![0.0; horizon];
            correlated_draw(factor, &mut rng, &mut row);
            row
        })
        .collect();
    Ok(DMatrix::from_fn(n_paths, horizon, |i, t| rows[i][t]))
}

/// Empirical second-moment matrix of the rows of `paths`.
pub fn empirical_covariance(paths: &DMatrix<f64>) -> DMatrix<f64> {
    let n = paths.nrows() as f64;
    paths.transpose() * paths / n
}

// ── Gauss–Hermite quadrature ───────────────────────────────────────

/// Nodes and weights for `∫ e^{-x²} f(x) dx`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch eigenvalues as starting points, polished by Newton
    /// iteration on the orthonormal Hermite recurrence.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(invalid("order", "quadrature order must be >= 1"));
        }
        let n = order;
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let mut guesses: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        guesses.sort_by(|a, b| b.total_cmp(a));

        let pim4 = PI.powf(-0.25);
        let nf = n as f64;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut z = guesses[i];
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(Z)]` for `Z ~ N(mean, variance)`.
    pub fn expectation<F: Fn(f64) -> f64>(&self, f: F, mean: f64, variance: f64) -> Result<f64> {
        if !(variance >= 0.0) {
            return Err(invalid("variance", format!("must be >= 0, got {variance}")));
        }
        let scale = (2.0 * variance).sqrt();
        let total: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mean + scale * x))
            .sum();
        Ok(total / PI.sqrt())
    }
}

/// `E[f(Z)]`, `Z ~ N(mean, variance)`, by an `order`-point Gauss–Hermite rule.
pub fn gauss_hermite_expectation<F: Fn(f64) -> f64>(
    f: F,
    mean: f64,
    variance: f64,
    order: usize,
) -> Result<f64> {
    GaussHermite::new(order)?.expectation(f, mean, variance)
}

// ── Deterministic reductions ───────────────────────────────────────

/// Pairwise (tree) summation; the result only depends on the slice order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Tree-merges partial results in order with `merge`.
pub fn pairwise_reduce<T, F>(mut parts: Vec<T>, merge: F) -> Option<T>
where
    F: Fn(T, T) -> T,
{
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut iter = parts.into_iter();
        while let Some(a) = iter.next() {
            match iter.next() {
                Some(b) => next.push(merge(a, b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn identity_is_left_alone_by_projection() {
        let k = SymmetricKernel::new(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(psd_project(&k, 0.0).unwrap(), k);
    }

    #[test]
    fn negative_eigenvalue_is_clipped() {
        let k = SymmetricKernel::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-8])))
            .unwrap();
        let p = psd_project(&k, 0.0).unwrap();
        assert!((p.get(0, 0) - 1.0).abs() < 1e-15);
        assert!(p.get(1, 1).abs() < 1e-15);
        assert!(p.get(0, 1).abs() < 1e-15);
    }

    #[test]
    fn projection_rejects_nan() {
        let mut m = DMatrix::identity(2, 2);
        m[(1, 1)] = f64::NAN;
        assert!(SymmetricKernel::new(m).is_err());
    }

    #[test]
    fn hand_checkable_cholesky() {
        let k = SymmetricKernel::new(DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0])).unwrap();
        let l = cholesky_factor(&k).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0]);
        assert!((l - expected).amax() < 1e-14);
    }

    #[test]
    fn identity_and_zero_factor() {
        let id = SymmetricKernel::new(DMatrix::identity(4, 4)).unwrap();
        assert_eq!(cholesky_factor(&id).unwrap(), DMatrix::identity(4, 4));
        let zero = SymmetricKernel::zeros(5);
        assert_eq!(cholesky_factor(&zero).unwrap(), DMatrix::zeros(5, 5));
    }

    #[test]
    fn rank_deficient_factor_reconstructs() {
        // rank one: v v^T
        let v = DVector::from_vec(vec![1.0, 2.0, -0.5]);
        let k = SymmetricKernel::new(&v * v.transpose()).unwrap();
        let l = cholesky_factor(&k).unwrap();
        let err = (&l * l.transpose() - k.matrix()).norm() / k.matrix().norm();
        assert!(err < 1e-10, "relative error {err}");
    }

    #[test]
    fn zero_paths_is_an_error() {
        let l = DMatrix::identity(2, 2);
        assert!(sample_correlated_paths(&l, 0, RngStream::new(1, 0, Purpose::Noise)).is_err());
    }

    #[test]
    fn zero_kernel_paths_are_zero() {
        let l = DMatrix::zeros(3, 3);
        let p = sample_correlated_paths(&l, 10, RngStream::new(1, 0, Purpose::Noise)).unwrap();
        assert!(p.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn paths_are_bit_reproducible() {
        let k = SymmetricKernel::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0])).unwrap();
        let l = cholesky_factor(&k).unwrap();
        let s = RngStream::new(42, 7, Purpose::Noise);
        let a = sample_correlated_paths(&l, 257, s).unwrap();
        let b = sample_correlated_paths(&l, 257, s).unwrap();
        assert_eq!(a, b);
        // rows are keyed by absolute path index
        let tail = sample_correlated_paths(&l, 7, s.with_path(7 + 250)).unwrap();
        assert_eq!(a.rows(250, 7).clone_owned(), tail);
    }

    #[test]
    fn purposes_give_distinct_streams() {
        let a: f64 = standard_normal(&mut RngStream::new(3, 0, Purpose::Noise).rng());
        let b: f64 = standard_normal(&mut RngStream::new(3, 0, Purpose::Teacher).rng());
        let c: f64 = standard_normal(&mut RngStream::new(3, 1, Purpose::Noise).rng());
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn hermite_weights_sum_to_sqrt_pi() {
        for order in [1, 2, 3, 5, 10, 40, 80, 120, 240, 400] {
            let gh = GaussHermite::new(order).unwrap();
            let s: f64 = gh.weights().iter().sum();
            assert!((s - PI.sqrt()).abs() < 1e-12, "order {order}: {s}");
        }
    }

    #[test]
    fn simple_gaussian_moments() {
        let e1 = gauss_hermite_expectation(|z| z, 0.0, 1.0, 40).unwrap();
        let e2 = gauss_hermite_expectation(|z| z * z, 0.0, 1.0, 40).unwrap();
        assert!(e1.abs() < 1e-14);
        assert!((e2 - 1.0).abs() < 1e-13);
        // exact for degree < 2 * order: E[Z^6] = 15, order 4
        let e6 = gauss_hermite_expectation(|z| z.powi(6), 0.0, 1.0, 4).unwrap();
        assert!((e6 - 15.0).abs() < 1e-11);
        let shifted = gauss_hermite_expectation(|z| z * z, 0.5, 2.0, 10).unwrap();
        assert!((shifted - 2.25).abs() < 1e-12);
    }

    #[test]
    fn negative_variance_rejected() {
        assert!(gauss_hermite_expectation(|z| z, 0.0, -1.0, 10).is_err());
        assert!(GaussHermite::new(0).is_err());
    }

    #[test]
    fn pairwise_reduce_is_order_preserving() {
        let parts: Vec<Vec<u32>> = (0..13).map(|i| vec![i]).collect();
        let merged = pairwise_reduce(parts, |mut a, b| {
            a.extend(b);
            a
        })
        .unwrap();
        assert_eq!(merged, (0..13).collect::<Vec<_>>());
    }
}
