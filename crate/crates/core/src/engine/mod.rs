//! Exact GP inference on the block-tridiagonal precision of the state-space
//! prior.
//!
//! With `N` state blocks anchored at the data times, `Q₀ := P∞` and
//! `W_i = Q_i⁻¹`, the prior precision is
//!
//! ```text
//! diag_i  = W_i + Φ_{i+1}ᵀ·W_{i+1}·Φ_{i+1}     (last block: W_{n−1})
//! upper_i = −Φ_{i+1}ᵀ·W_{i+1}
//! ```
//!
//! and observations add `Hᵀ·H/σ_n²` to observed diagonal blocks.

mod data;
mod gaps;

use nalgebra::DMatrix;

pub use data::{Dataset, NoiseModel, Normalization, ObservationMask};
use gaps::{GapTable, Grid};

use crate::btd::{factor_from_root, selective_inverse, solve, BtdFactor, SymBtd};
use crate::error::{Error, Result};
use crate::kernel::{state_space_of, Hyperparameters, KernelSpec, StateSpaceModel};
use crate::linalg::triangularize;

/// Numerical regularization knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineOptions {
    /// Every `Q_i` (including `Q₀ = P∞`) receives `jitter_scale·Tr(P∞)/b·I`.
    pub jitter_scale: f64,
    /// Gaps below `coincidence_tol·span` count as coincident.
    pub coincidence_tol: f64,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            jitter_scale: 1e-10,
            coincidence_tol: 1e-9,
        }
    }
}

/// Gradient of the log marginal likelihood. Kernel hyperparameters come
/// first, in [`KernelSpec::param_names`] order; the noise variance is last.
#[derive(Debug, Clone, PartialEq)]
pub struct MllGradient {
    pub names: Vec<String>,
    /// `∂MLL/∂p` with respect to the natural parameters.
    pub natural: Vec<f64>,
    /// The parameter values at which the gradient was taken.
    pub values: Vec<f64>,
}

impl MllGradient {
    /// `∂MLL/∂ln p = p·∂MLL/∂p`.
    pub fn log_space(&self) -> Vec<f64> {
        self.natural.iter().zip(&self.values).map(|(g, v)| g * v).collect()
    }
}

/// Posterior marginals at the requested test times, in request order.
/// Means and variances are in the (normalized) units of the dataset values.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub test_times: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub includes_noise: bool,
    pub mll: f64,
    pub mll_grad: MllGradient,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const NEGATIVE_VARIANCE_TOL: f64 = 1e-10;

/// Inference entry points with explicit [`EngineOptions`]. The free
/// functions of this module use the defaults.
#[derive(Debug, Clone, Copy, Default)]
pub struct Engine {
    pub options: EngineOptions,
}

struct Posterior {
    mll: f64,
    grad: Option<MllGradient>,
    factor: BtdFactor,
    alpha: DMatrix<f64>,
}

impl Engine {
    pub fn new(options: EngineOptions) -> Self {
        Self { options }
    }

    fn check_training_gaps(&self, times: &[f64]) -> Result<f64> {
        let span = span_of(times);
        let eps = self.options.coincidence_tol * span;
        for i in 1..times.len() {
            if times[i] - times[i - 1] < eps {
                return Err(Error::DuplicateTimestamp(i));
            }
        }
        Ok(eps)
    }

    /// Prior precision over the state blocks at `times`.
    pub fn assemble_prior_precision(&self, times: &[f64], ssm: &StateSpaceModel) -> Result<SymBtd> {
        check_times(times)?;
        let grid = Grid::from_sorted(times);
        let table = GapTable::build(ssm, &grid, self.options.jitter_scale, false)?;
        Ok(table.precision(&grid))
    }

    fn posterior(
        &self,
        grid: &Grid,
        y: &[f64],
        ssm: &StateSpaceModel,
        noise: &NoiseModel,
        mask: &ObservationMask,
        with_grad: bool,
    ) -> Result<Posterior> {
        let b = ssm.state_dim();
        let n = grid.len();
        let s = noise.variance();
        let table = GapTable::build(ssm, grid, self.options.jitter_scale, with_grad)?;
        let factor = root_factor(&table, grid, ssm, noise, mask)?;

        // v = Gᵀ·Σ⁻¹·y on observed blocks
        let mut v = DMatrix::zeros(n * b, 1);
        let mut k = 0;
        for i in 0..n {
            if mask.is_observed(i) {
                for j in 0..b {
                    v[(i * b + j, 0)] = ssm.h[j] * y[k] / s;
                }
                k += 1;
            }
        }
        let n_obs = k;
        let alpha = solve(&factor, &v)?;
        // yᵀΣ⁻¹y − vᵀα cancels badly for small noise; the same quantity is
        // ‖y − Gα‖²/σ² + αᵀ·P_prior·α
        let mut resid_sq = 0.0;
        let mut k = 0;
        for i in 0..n {
            if mask.is_observed(i) {
                let r = y[k] - (&ssm.h * alpha.rows(i * b, b))[(0, 0)];
                resid_sq += r * r;
                k += 1;
            }
        }
        let data_fit = resid_sq / s + table.prior_quadratic(grid, &alpha);
        let logdet_prior_precision = -table.sum_logdet_q(grid);
        let mll = -0.5 * data_fit
            - 0.5 * (factor.logdet() - logdet_prior_precision + n_obs as f64 * s.ln())
            - 0.5 * n_obs as f64 * LN_2PI;

        let grad = if with_grad {
            let c = selective_inverse(&factor);
            let mut names: Vec<String> = ssm.params.iter().map(|p| p.name.clone()).collect();
            let mut values: Vec<f64> = ssm.params.iter().map(|p| p.value).collect();
            let mut natural = Vec::with_capacity(ssm.n_params() + 1);
            for j in 0..ssm.n_params() {
                let (data_fit, trace) = table.derivative_contractions(grid, j, &alpha, &c);
                let dlogdet_q = table.sum_trace_w_dq(grid, j);
                natural.push(-0.5 * data_fit - 0.5 * (trace + dlogdet_q));
            }
            // noise variance: ½‖y − Gα‖²/σ⁴ + ½·Tr(G·C·Gᵀ)/σ⁴ − ½·N/σ²
            let mut h_c_h = 0.0;
            for i in 0..n {
                if mask.is_observed(i) {
                    h_c_h += (&ssm.h * &c.diag()[i] * ssm.h.transpose())[(0, 0)];
                }
            }
            let g_noise = 0.5 * (resid_sq + h_c_h) / (s * s) - 0.5 * n_obs as f64 / s;
            natural.push(g_noise);
            names.push("noise_variance".to_string());
            values.push(s);
            Some(MllGradient { names, natural, values })
        } else {
            None
        };
        Ok(Posterior {
            mll,
            grad,
            factor,
            alpha,
        })
    }

    fn training_posterior(
        &self,
        data: &Dataset,
        spec: &KernelSpec,
        theta: &Hyperparameters,
        noise: &NoiseModel,
        with_grad: bool,
    ) -> Result<Posterior> {
        theta.check_for(spec)?;
        self.check_training_gaps(data.times())?;
        let ssm = state_space_of(spec, theta)?;
        let grid = Grid::from_sorted(data.times());
        let mask = ObservationMask::all(data.len());
        self.posterior(&grid, data.values(), &ssm, noise, &mask, with_grad)
    }

    pub fn log_marginal_likelihood(
        &self,
        data: &Dataset,
        spec: &KernelSpec,
        theta: &Hyperparameters,
        noise: &NoiseModel,
    ) -> Result<f64> {
        Ok(self.training_posterior(data, spec, theta, noise, false)?.mll)
    }

    /// MLL and its gradient from one factorization.
    pub fn mll_and_gradient(
        &self,
        data: &Dataset,
        spec: &KernelSpec,
        theta: &Hyperparameters,
        noise: &NoiseModel,
    ) -> Result<(f64, MllGradient)> {
        let post = self.training_posterior(data, spec, theta, noise, true)?;
        Ok((post.mll, post.grad.expect("gradient requested")))
    }

    pub fn mll_gradient(
        &self,
        data: &Dataset,
        spec: &KernelSpec,
        theta: &Hyperparameters,
        noise: &NoiseModel,
    ) -> Result<MllGradient> {
        Ok(self.mll_and_gradient(data, spec, theta, noise)?.1)
    }

    /// Posterior marginals at `test_times` from a single factorization over
    /// the merged train/test grid. Test times within the coincidence
    /// tolerance of a training time are moved forward by that tolerance.
    pub fn predict(
        &self,
        data: &Dataset,
        spec: &KernelSpec,
        theta: &Hyperparameters,
        noise: &NoiseModel,
        test_times: &[f64],
        include_noise: bool,
    ) -> Result<PosteriorSummary> {
        theta.check_for(spec)?;
        let eps = self.check_training_gaps(data.times())?;
        if let Some(i) = test_times.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let ssm = state_space_of(spec, theta)?;
        let (grid, mask, test_node) = Grid::merged(data.times(), test_times, eps);
        let post = self.posterior(&grid, data.values(), &ssm, noise, &mask, true)?;
        let b = ssm.state_dim();
        let c = selective_inverse(&post.factor);
        let mut mean = Vec::with_capacity(test_times.len());
        let mut variance = Vec::with_capacity(test_times.len());
        for &node in &test_node {
            let a = post.alpha.rows(node * b, b);
            mean.push((&ssm.h * a)[(0, 0)]);
            let mut var = (&ssm.h * &c.diag()[node] * ssm.h.transpose())[(0, 0)];
            if var < 0.0 {
                if var < -NEGATIVE_VARIANCE_TOL {
                    return Err(Error::NegativeVariance { index: node, value: var });
                }
                var = 0.0;
            }
            if include_noise {
                var += noise.variance();
            }
            variance.push(var);
        }
        Ok(PosteriorSummary {
            test_times: test_times.to_vec(),
            mean,
            variance,
            includes_noise: include_noise,
            mll: post.mll,
            mll_grad: post.grad.expect("gradient requested"),
        })
    }
}

/// Factor of the posterior precision `P = 𝒦⁻¹ + Gᵀ·Σ⁻¹·G` without forming
/// `P`.
///
/// `P = Jᵀ·J` for the block-bidiagonal system whose rows are the whitened
/// transitions `L_i⁻¹·(z_i − Φ_i·z_{i−1})` (with `L₀⁻¹·z₀` for the anchor)
/// and the scaled observations `H·z_i/σ_n`. A forward sweep of small QR
/// reductions turns `J` into the block upper-bidiagonal Cholesky factor of
/// `P`. Forming `P` first would square the conditioning of `J`, which for
/// smooth kernels (nearly singular `Q_i`) costs most of the available digits.
fn root_factor(
    table: &GapTable,
    grid: &Grid,
    ssm: &StateSpaceModel,
    noise: &NoiseModel,
    mask: &ObservationMask,
) -> Result<BtdFactor> {
    if mask.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: mask.len(),
        });
    }
    let b = ssm.state_dim();
    let n = grid.len();
    let h_scaled = &ssm.h / noise.variance().sqrt();
    let mut carry = table.terms(0).root.clone();
    let mut diag = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n.saturating_sub(1));
    for i in 0..n {
        let extra = usize::from(mask.is_observed(i));
        let rc = carry.nrows();
        if i + 1 < n {
            let next = table.terms(grid.gap_of(i + 1));
            let mut m = DMatrix::zeros(rc + extra + b, 2 * b);
            m.view_mut((0, 0), (rc, b)).copy_from(&carry);
            if extra == 1 {
                m.view_mut((rc, 0), (1, b)).copy_from(&h_scaled);
            }
            m.view_mut((rc + extra, 0), (b, b)).copy_from(&(-&next.root_phi));
            m.view_mut((rc + extra, b), (b, b)).copy_from(&next.root);
            triangularize(&mut m);
            let rows = m.nrows().min(2 * b);
            diag.push(m.view((0, 0), (b, b)).into_owned());
            upper.push(m.view((0, b), (b, b)).into_owned());
            carry = m.view((b, b), (rows - b, b)).into_owned();
        } else {
            let mut m = DMatrix::zeros(rc + extra, b);
            m.view_mut((0, 0), (rc, b)).copy_from(&carry);
            if extra == 1 {
                m.view_mut((rc, 0), (1, b)).copy_from(&h_scaled);
            }
            triangularize(&mut m);
            let mut d = DMatrix::zeros(b, b);
            let rows = m.nrows().min(b);
            d.view_mut((0, 0), (rows, b)).copy_from(&m.view((0, 0), (rows, b)));
            diag.push(d);
        }
    }
    factor_from_root(diag, upper)
}

fn span_of(times: &[f64]) -> f64 {
    let span = times.last().copied().unwrap_or(0.0) - times.first().copied().unwrap_or(0.0);
    if span > 0.0 {
        span
    } else {
        1.0
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(i) = times.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    for i in 1..times.len() {
        if times[i] <= times[i - 1] {
            return Err(Error::NonIncreasingTimes(i));
        }
    }
    Ok(())
}

/// Prior precision `𝒦⁻¹` over the state blocks at `times`.
pub fn assemble_prior_precision(times: &[f64], ssm: &StateSpaceModel) -> Result<SymBtd> {
    Engine::default().assemble_prior_precision(times, ssm)
}

/// Adds `Hᵀ·H/σ_n²` to every observed diagonal block.
pub fn add_observation_term(
    mut prior: SymBtd,
    ssm: &StateSpaceModel,
    noise: &NoiseModel,
    mask: &ObservationMask,
) -> Result<SymBtd> {
    if mask.len() != prior.n_blocks() {
        return Err(Error::DimensionMismatch {
            expected: prior.n_blocks(),
            got: mask.len(),
        });
    }
    if ssm.state_dim() != prior.block_dim() {
        return Err(Error::DimensionMismatch {
            expected: prior.block_dim(),
            got: ssm.state_dim(),
        });
    }
    let hth: DMatrix<f64> = ssm.h.transpose() * &ssm.h / noise.variance();
    for (i, d) in prior.diag_mut().iter_mut().enumerate() {
        if mask.is_observed(i) {
            *d += &hth;
        }
    }
    Ok(prior)
}

pub fn log_marginal_likelihood(
    data: &Dataset,
    spec: &KernelSpec,
    theta: &Hyperparameters,
    noise: &NoiseModel,
) -> Result<f64> {
    Engine::default().log_marginal_likelihood(data, spec, theta, noise)
}

pub fn mll_gradient(
    data: &Dataset,
    spec: &KernelSpec,
    theta: &Hyperparameters,
    noise: &NoiseModel,
) -> Result<MllGradient> {
    Engine::default().mll_gradient(data, spec, theta, noise)
}

pub fn mll_and_gradient(
    data: &Dataset,
    spec: &KernelSpec,
    theta: &Hyperparameters,
    noise: &NoiseModel,
) -> Result<(f64, MllGradient)> {
    Engine::default().mll_and_gradient(data, spec, theta, noise)
}

pub fn predict(
    data: &Dataset,
    spec: &KernelSpec,
    theta: &Hyperparameters,
    noise: &NoiseModel,
    test_times: &[f64],
    include_noise: bool,
) -> Result<PosteriorSummary> {
    Engine::default().predict(data, spec, theta, noise, test_times, include_noise)
}
