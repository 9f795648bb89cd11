//! Brute-force reference computations for the test suites.
//!
//! Nothing here samples: every value is either closed form or a dense
//! deterministic quadrature, so the Monte Carlo code can be checked against
//! something that shares none of its machinery.

use nalgebra::{DMatrix, SymmetricEigen};

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `E[f(Z)]` for `Z ~ N(mean, var)` by adaptive Simpson over `±12` sd.
pub fn gaussian_expectation<F: Fn(f64) -> f64>(f: F, mean: f64, var: f64, tol: f64) -> f64 {
    let sd = var.sqrt();
    let g = |z: f64| f(mean + sd * z) * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    adaptive_simpson(&g, -12.0, 12.0, tol)
}

fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `(1/n) E tr (X Xᵀ)^k` for `X` with `n = α d` rows and `N(0, 1/d)`
/// entries, in the proportional limit (Narayana polynomial).
pub fn gram_moment(k: u64, alpha: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    (1..=k)
        .map(|j| binomial(k, j) * binomial(k, j - 1) / k as f64 * alpha.powi(j as i32 - 1))
        .sum()
}

/// Exact per-sample second moment of `r^t = X w^t` for full-batch gradient
/// descent on the loss `r²/2` with ridge `λ`, `w^0` i.i.d. unit variance:
/// `E (r^t)² = (1/n) tr[(c - γ G)^{2t} G]`, `c = 1 - γλ`, `G = X Xᵀ`.
pub fn quadratic_gd_second_moment(t: u64, alpha: f64, gamma: f64, lambda: f64) -> f64 {
    let c = 1.0 - gamma * lambda;
    (0..=2 * t)
        .map(|j| {
            binomial(2 * t, j)
                * c.powi((2 * t - j) as i32)
                * (-gamma).powi(j as i32)
                * gram_moment(j + 1, alpha)
        })
        .sum()
}

/// Gauss–Hermite rule for `∫ e^{-x²} f` via Golub–Welsch.
pub fn hermite_rule(order: usize) -> (Vec<f64>, Vec<f64>) {
    let j = DMatrix::from_fn(order, order, |i, k| {
        if i + 1 == k || k + 1 == i {
            (i.max(k) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(j);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let nodes = eig.eigenvalues.iter().copied().collect();
    let weights = (0..order)
        .map(|i| sqrt_pi * eig.eigenvectors[(0, i)].powi(2))
        .collect();
    (nodes, weights)
}

/// Gauss–Legendre rule on `[a, b]` via Golub–Welsch.
pub fn legendre_rule(order: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let j = DMatrix::from_fn(order, order, |i, k| {
        if i + 1 == k || k + 1 == i {
            let m = i.max(k) as f64;
            m / (4.0 * m * m - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(j);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let nodes = eig.eigenvalues.iter().map(|x| mid + half * x).collect();
    let weights = (0..order)
        .map(|i| 2.0 * half * eig.eigenvectors[(0, i)].powi(2))
        .collect();
    (nodes, weights)
}

/// Constants of a small effective-process instance.
#[derive(Clone, Copy)]
pub struct SmallProblem<'a> {
    pub horizon: usize,
    pub alpha: f64,
    /// Prefactor on `s^t l'`.
    pub gamma_g: f64,
    /// `1 - γλ`.
    pub ridge: f64,
    pub b: f64,
    pub m0: f64,
    /// Variance of `η^0`.
    pub eta0_var: f64,
    /// `γ² T`, added to the noise diagonal.
    pub langevin_var: f64,
    pub first: &'a dyn Fn(f64, f64) -> f64,
    pub second: &'a dyn Fn(f64, f64) -> f64,
}

/// Kernels of a small instance as plain nested vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallKernels {
    pub cov: Vec<Vec<f64>>,
    pub memory: Vec<Vec<f64>>,
    pub local: Vec<f64>,
    pub drift: Vec<f64>,
    pub magnetization: Vec<f64>,
}

impl SmallKernels {
    pub fn zeros(problem: &SmallProblem) -> Self {
        let t = problem.horizon;
        let mut k = Self {
            cov: vec![vec![0.0; t]; t],
            memory: vec![vec![0.0; t]; t],
            local: vec![0.0; t],
            drift: vec![0.0; t],
            magnetization: vec![],
        };
        for i in 0..t {
            k.cov[i][i] = problem.langevin_var;
        }
        k.rebuild(problem);
        k
    }

    pub fn rebuild(&mut self, problem: &SmallProblem) {
        let mut m = vec![problem.m0];
        for t in 0..problem.horizon {
            m.push(problem.ridge * m[t] - self.drift[t]);
        }
        self.magnetization = m;
    }
}

fn cholesky_small(c: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = c.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][i] = (c[i][i] - s).max(0.0).sqrt();
            } else if l[j][j] > 0.0 {
                l[i][j] = (c[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

/// Pre-activation trajectory `η^0 .. η^{T-1}` for one quadrature point,
/// optionally with the loss argument at `kick.0` shifted by `kick.1`.
fn trajectory(
    p: &SmallProblem,
    k: &SmallKernels,
    eta_star: f64,
    eta0: f64,
    u: &[f64],
    mask: &[f64],
    kick: Option<(usize, f64)>,
) -> Vec<f64> {
    let y = if eta_star >= 0.0 { 1.0 } else { -1.0 };
    let mut eta = vec![eta0];
    for t in 0..p.horizon - 1 {
        let mut r = eta[t] + eta_star * k.magnetization[t];
        if let Some((s, e)) = kick {
            if s == t {
                r += e;
            }
        }
        let mut next = (p.ridge + k.local[t]) * eta[t] - p.gamma_g * mask[t] * (p.first)(r, y) + u[t];
        for j in 0..t {
            next += k.memory[t][j] * eta[j];
        }
        eta.push(next);
    }
    eta
}

/// Exact kernel proposal under fixed input kernels: the Gaussian integrals
/// over `(η*, η^0, u^0 .. u^{T-2})` by tensor quadrature, the masks by
/// enumeration. The memory kernel is obtained by central differences of a
/// loss-argument kick, with no Jacobian recursion.
pub fn quadrature_proposal(p: &SmallProblem, k: &SmallKernels, order: usize) -> SmallKernels {
    let horizon = p.horizon;
    let (hx, hw) = hermite_rule(order);
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let (lx, lw) = legendre_rule(2 * order, 0.0, 9.0);
    let mut star_nodes = Vec::new();
    for (&x, &w) in lx.iter().zip(&lw) {
        let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        star_nodes.push((x, w * phi));
        star_nodes.push((-x, w * phi));
    }
    let noise_dims = horizon.saturating_sub(1);
    let l = cholesky_small(&k.cov);

    let mut cov = vec![vec![0.0; horizon]; horizon];
    let mut memory = vec![vec![0.0; horizon]; horizon];
    let mut local = vec![0.0; horizon];
    let mut drift = vec![0.0; horizon];
    let h = 1e-5;

    let masks: Vec<(Vec<f64>, f64)> = (0..1usize << horizon)
        .filter_map(|bits| {
            let mask: Vec<f64> = (0..horizon).map(|t| ((bits >> t) & 1) as f64).collect();
            let on = mask.iter().sum::<f64>();
            let w = p.b.powf(on) * (1.0 - p.b).powf(horizon as f64 - on);
            (w > 0.0).then_some((mask, w))
        })
        .collect();

    let dims = 1 + noise_dims;
    let total = order.pow(dims as u32);
    let mut idx = vec![0usize; dims];
    for flat in 0..total {
        let mut rem = flat;
        for d in idx.iter_mut() {
            *d = rem % order;
            rem /= order;
        }
        let mut gw = 1.0;
        let mut z = vec![0.0; dims];
        for (d, &i) in idx.iter().enumerate() {
            z[d] = std::f64::consts::SQRT_2 * hx[i];
            gw *= hw[i] * inv_sqrt_pi;
        }
        if gw < 1e-300 {
            continue;
        }
        let eta0 = p.eta0_var.sqrt() * z[0];
        let u: Vec<f64> = (0..noise_dims)
            .map(|t| (0..=t).map(|j| l[t][j] * z[1 + j]).sum())
            .collect();
        for &(es, sw) in &star_nodes {
            let y = if es >= 0.0 { 1.0 } else { -1.0 };
            for (mask, mw) in &masks {
                let w = gw * sw * mw;
                let eta = trajectory(p, k, es, eta0, &u, mask, None);
                let g: Vec<f64> = (0..horizon)
                    .map(|t| mask[t] * (p.first)(eta[t] + es * k.magnetization[t], y))
                    .collect();
                let c: Vec<f64> = (0..horizon)
                    .map(|t| mask[t] * (p.second)(eta[t] + es * k.magnetization[t], y))
                    .collect();
                for t in 0..horizon {
                    local[t] += w * c[t];
                    drift[t] += w * g[t] * es;
                    for s in 0..=t {
                        cov[t][s] += w * g[t] * g[s];
                    }
                }
                for s in 0..horizon.saturating_sub(1) {
                    let up = trajectory(p, k, es, eta0, &u, mask, Some((s, h)));
                    let dn = trajectory(p, k, es, eta0, &u, mask, Some((s, -h)));
                    for t in (s + 1)..horizon {
                        let gp = (p.first)(up[t] + es * k.magnetization[t], y);
                        let gm = (p.first)(dn[t] + es * k.magnetization[t], y);
                        memory[t][s] += w * mask[t] * (gp - gm) / (2.0 * h);
                    }
                }
            }
        }
    }
    let a = p.alpha;
    let g = p.gamma_g;
    let mut out = SmallKernels {
        cov: vec![vec![0.0; horizon]; horizon],
        memory: vec![vec![0.0; horizon]; horizon],
        local: local.iter().map(|x| -a * g * x).collect(),
        drift: drift.iter().map(|x| a * g * x).collect(),
        magnetization: vec![],
    };
    for t in 0..horizon {
        for s in 0..=t {
            let v = a * g * g * cov[t][s];
            out.cov[t][s] = v;
            out.cov[s][t] = v;
        }
        out.cov[t][t] += p.langevin_var;
        for s in 0..t {
            out.memory[t][s] = -a * g * memory[t][s];
        }
    }
    out.rebuild(p);
    out
}

/// Damped fixed point of [`quadrature_proposal`], run to `tol` in the
/// largest entrywise change.
pub fn quadrature_fixed_point(
    p: &SmallProblem,
    order: usize,
    damping: f64,
    tol: f64,
    max_sweeps: usize,
) -> SmallKernels {
    let mut k = SmallKernels::zeros(p);
    for _ in 0..max_sweeps {
        let prop = quadrature_proposal(p, &k, order);
        let mut change: f64 = 0.0;
        let mut blend = |old: &mut f64, new: f64| {
            let v = damping * new + (1.0 - damping) * *old;
            change = change.max((v - *old).abs());
            *old = v;
        };
        for t in 0..p.horizon {
            for s in 0..p.horizon {
                blend(&mut k.cov[t][s], prop.cov[t][s]);
                blend(&mut k.memory[t][s], prop.memory[t][s]);
            }
            blend(&mut k.local[t], prop.local[t]);
            blend(&mut k.drift[t], prop.drift[t]);
        }
        k.rebuild(p);
        if change < tol {
            break;
        }
    }
    k
}
