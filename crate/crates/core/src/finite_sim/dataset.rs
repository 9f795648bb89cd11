use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, DmftError, Result};
use crate::loss::label;
use crate::numerics::{standard_normal, Purpose, RngStream};

/// Gaussian teacher-student data.
///
/// `x` has i.i.d. `N(0, 1/d)` entries (times `Σ^{1/2}` when a covariance root
/// is given) and the teacher `w_star` has i.i.d. `N(0, 1/d)` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub w_star: DVector<f64>,
    pub y: DVector<f64>,
    pub sigma_root: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// `n / d`.
    pub fn alpha(&self) -> f64 {
        self.n() as f64 / self.d() as f64
    }
}

/// Draws `X` from `(seed, Data)` and the teacher from `(seed, Teacher)`.
pub fn generate_dataset(
    n: usize,
    d: usize,
    seed: u64,
    sigma_root: Option<DMatrix<f64>>,
) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(invalid("n, d", format!("must be >= 1, got n = {n}, d = {d}")));
    }
    if let Some(s) = &sigma_root {
        if s.nrows() != d || s.ncols() != d {
            return Err(DmftError::Shape(format!(
                "sigma_root must be {d}x{d}, got {}x{}",
                s.nrows(),
                s.ncols()
            )));
        }
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut rng = RngStream::new(seed, 0, Purpose::Data).rng();
    // Row-major fill so that row μ only depends on draws up to sample μ.
    let mut x = DMatrix::zeros(n, d);
    for mu in 0..n {
        for i in 0..d {
            x[(mu, i)] = scale * standard_normal(&mut rng);
        }
    }
    if let Some(s) = &sigma_root {
        x = &x * s;
    }
    let mut rng = RngStream::new(seed, 0, Purpose::Teacher).rng();
    let w_star = DVector::from_fn(d, |_, _| scale * standard_normal(&mut rng));
    let y = (&x * &w_star).map(label);
    Ok(Dataset {
        x,
        w_star,
        y,
        sigma_root,
    })
}
