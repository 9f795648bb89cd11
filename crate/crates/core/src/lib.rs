//! Discrete-time dynamical mean-field theory (DMFT) for stochastic gradient
//! descent on the Gaussian teacher-student perceptron.
//!
//! The crate has two halves that are meant to be checked against each other:
//!
//! * the theory side ([`effective`], [`kernels`], [`solver`],
//!   [`sample_splitting`]) reduces the high-dimensional dynamics to a scalar
//!   effective process with memory and solves the self-consistency by damped
//!   Monte Carlo fixed-point iteration;
//! * the ground-truth side ([`finite_sim`]) runs SGD and its variants on
//!   synthetic finite-dimensional data.
//!
//! [`numerics`] holds the shared random streams, PSD repair, Cholesky
//! sampling and Gauss–Hermite quadrature.

pub mod effective;
pub mod error;
pub mod finite_sim;
pub mod kernels;
pub mod loss;
pub mod numerics;
pub mod params;
pub mod sample_splitting;
pub mod solver;

pub use error::{DmftError, Result};
pub use kernels::KernelSet;
pub use loss::{LossDerivatives, LossSpec, ScalarLoss};
pub use params::{GradNorm, MaskMode, ModelParams};
pub use solver::{CurveTable, Solution, SolverConfig};
