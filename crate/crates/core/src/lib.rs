//! Exact temporal Gaussian-process regression through the block-tridiagonal
//! precision of the equivalent state-space model.
//!
//! * [`kernel`]: kernels, state-space conversion and discretization.
//! * [`btd`]: symmetric block-tridiagonal factorization, solves,
//!   log-determinant, selective inversion and cyclic reduction.
//! * [`engine`]: precision assembly, marginal likelihood, gradient and
//!   prediction.
//! * [`optimize`]: quasi-Newton marginal-likelihood maximization.
//! * [`baselines`]: dense GP and Kalman/RTS reference implementations.

pub mod baselines;
pub mod btd;
pub mod engine;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod optimize;

pub use error::{Error, Result};
