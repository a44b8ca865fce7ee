//! Reference implementations: a dense `O(N³)` GP and a Kalman filter with an
//! RTS smoother. Both share nothing with the block-tridiagonal engine beyond
//! the kernel definitions.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::engine::{Dataset, MllGradient, NoiseModel};
use crate::error::{Error, Result};
use crate::kernel::{discretize, discretize_all, Covariance, DiscreteStep, Hyperparameters, KernelSpec, StateSpaceModel};
use crate::linalg::{cholesky, symmetrize};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const NEGATIVE_VARIANCE_TOL: f64 = 1e-10;

/// Largest training set the dense baseline accepts by default.
pub const DENSE_CAP: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGpResult {
    pub mll: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `(max Lᵢᵢ / min Lᵢᵢ)²` of the Cholesky factor, a cheap lower bound on
    /// the condition number of `K + σ_n²·I`.
    pub condition_estimate: f64,
}

/// Kernel evaluations memoized by the bit pattern of the lag.
struct Gram {
    cov: Covariance,
    cache: HashMap<u64, (f64, Vec<f64>)>,
    with_grad: bool,
}

impl Gram {
    fn new(spec: &KernelSpec, theta: &Hyperparameters, with_grad: bool) -> Result<Self> {
        Ok(Self {
            cov: Covariance::new(spec, theta)?,
            cache: HashMap::new(),
            with_grad,
        })
    }

    fn at(&mut self, tau: f64) -> &(f64, Vec<f64>) {
        let tau = tau.abs();
        let cov = &self.cov;
        let with_grad = self.with_grad;
        self.cache.entry(tau.to_bits()).or_insert_with(|| {
            if with_grad {
                cov.eval_with_grad(tau)
            } else {
                (cov.eval(tau), Vec::new())
            }
        })
    }
}

struct DenseFactor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    mll: f64,
    /// `∂K/∂θ_j` for each kernel hyperparameter, when requested.
    dk: Vec<DMatrix<f64>>,
}

fn dense_factor(
    data: &Dataset,
    spec: &KernelSpec,
    theta: &Hyperparameters,
    noise: &NoiseModel,
    cap: usize,
    with_grad: bool,
) -> Result<(DenseFactor, Gram)> {
    let n = data.len();
    if n > cap {
        return Err(Error::TooLarge { n, cap });
    }
    let t = data.times();
    let mut gram = Gram::new(spec, theta, with_grad)?;
    let np = if with_grad { theta.len() } else { 0 };
    let mut k = DMatrix::zeros(n, n);
    let mut dk = vec![DMatrix::zeros(n, n); np];
    for i in 0..n {
        for j in 0..=i {
            let (v, g) = gram.at(t[i] - t[j]);
            k[(i, j)] = *v;
            k[(j, i)] = *v;
            for (d, gv) in dk.iter_mut().zip(g) {
                d[(i, j)] = *gv;
                d[(j, i)] = *gv;
            }
        }
        k[(i, i)] += noise.variance();
    }
    let chol = cholesky(k).ok_or(Error::NotPositiveDefinite(0))?;
    let y = DVector::from_column_slice(data.values());
    let alpha = chol.solve(&y);
    let half_logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let mll = -0.5 * y.dot(&alpha) - half_logdet - 0.5 * n as f64 * LN_2PI;
    Ok((DenseFactor { chol, alpha, mll, dk }, gram))
}

pub fn dense_gp_mll(data: &Dataset, spec: &KernelSpec, theta: &Hyperparameters, noise: &NoiseModel) -> Result<f64> {
    Ok(dense_factor(data, spec, theta, noise, DENSE_CAP, false)?.0.mll)
}

/// Dense MLL with an explicit size cap.
pub fn dense_gp_mll_capped(
    data: &Dataset,
    spec: &KernelSpec,
    theta: &Hyperparameters,
    noise: &NoiseModel,
    cap: usize,
) -> Result<f64> {
    Ok(dense_factor(data, spec, theta, noise, cap, false)?.0.mll)
}

/// `∂MLL/∂θ = ½·Tr((α·αᵀ − K⁻¹)·∂K/∂θ)`, noise variance last.
pub fn dense_gp_mll_gradient(
    data: &Dataset,
    spec: &KernelSpec,
    theta: &Hyperparameters,
    noise: &NoiseModel,
) -> Result<(f64, MllGradient)> {
    let (f, _) = dense_factor(data, spec, theta, noise, DENSE_CAP, true)?;
    let k_inv = f.chol.inverse();
    let outer = &f.alpha * f.alpha.transpose();
    let inner = outer - &k_inv;
    let mut natural: Vec<f64> = f.dk.iter().map(|d| 0.5 * inner.dot(d)).collect();
    natural.push(0.5 * inner.trace());
    let mut names = spec.param_names();
    names.push("noise_variance".to_string());
    let mut values = theta.values().to_vec();
    values.push(noise.variance());
    Ok((f.mll, MllGradient { names, natural, values }))
}

/// Textbook predictive mean `k*ᵀ·K⁻¹·y` and variance `k** − k*ᵀ·K⁻¹·k*`
/// (latent function, without observation noise).
pub fn dense_gp_predict(
    data: &Dataset,
    spec: &KernelSpec,
    theta: &Hyperparameters,
    noise: &NoiseModel,
    test_times: &[f64],
) -> Result<DenseGpResult> {
    let (f, mut gram) = dense_factor(data, spec, theta, noise, DENSE_CAP, false)?;
    let t = data.times();
    let m = test_times.len();
    let mut ks = DMatrix::zeros(t.len(), m);
    for (j, ts) in test_times.iter().enumerate() {
        for (i, ti) in t.iter().enumerate() {
            ks[(i, j)] = gram.at(ts - ti).0;
        }
    }
    let k0 = gram.at(0.0).0;
    let mean = (ks.transpose() * &f.alpha).iter().copied().collect();
    let v = f
        .chol
        .l_dirty()
        .lower_triangle()
        .solve_lower_triangular(&ks)
        .ok_or(Error::NotPositiveDefinite(0))?;
    let variance = (0..m)
        .map(|j| {
            let var = k0 - v.column(j).norm_squared();
            if var < -NEGATIVE_VARIANCE_TOL {
                Err(Error::NegativeVariance { index: j, value: var })
            } else {
                Ok(var.max(0.0))
            }
        })
        .collect::<Result<_>>()?;
    let diag = f.chol.l_dirty().diagonal();
    let ratio = diag.max() / diag.min();
    Ok(DenseGpResult {
        mll: f.mll,
        mean,
        variance,
        condition_estimate: ratio * ratio,
    })
}

/// Filter output at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub predicted_mean: DVector<f64>,
    pub predicted_cov: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `ln N(yₙ; H·m⁻, H·P⁻·Hᵀ + σ_n²)`, zero at unobserved nodes.
    pub log_lik: f64,
}

/// Discretizations keyed by the exact bits of the gap.
struct StepCache<'a> {
    ssm: &'a StateSpaceModel,
    with_grad: bool,
    steps: HashMap<u64, DiscreteStep>,
}

impl<'a> StepCache<'a> {
    fn new(ssm: &'a StateSpaceModel, with_grad: bool) -> Self {
        Self {
            ssm,
            with_grad,
            steps: HashMap::new(),
        }
    }

    fn get(&mut self, dt: f64) -> &DiscreteStep {
        let (ssm, with_grad) = (self.ssm, self.with_grad);
        self.steps.entry(dt.to_bits()).or_insert_with(|| {
            if with_grad {
                discretize_all(ssm, dt)
            } else {
                discretize(ssm, dt)
            }
        })
    }
}

/// Forward filter over `times`; `y[i]` is `None` at unobserved nodes.
fn filter(ssm: &StateSpaceModel, times: &[f64], y: &[Option<f64>], noise: &NoiseModel) -> Result<Vec<KalmanState>> {
    let b = ssm.state_dim();
    let s = noise.variance();
    let ht = ssm.h.transpose();
    let mut cache = StepCache::new(ssm, false);
    let mut out: Vec<KalmanState> = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        let (m_pred, mut p_pred) = match out.last() {
            None => (DVector::zeros(b), ssm.p_inf.clone()),
            Some(prev) => {
                let step = cache.get(times[i] - times[i - 1]);
                (&step.phi * &prev.mean, &step.phi * &prev.cov * step.phi.transpose() + &step.q)
            }
        };
        symmetrize(&mut p_pred);
        let (mean, cov, log_lik) = match y[i] {
            None => (m_pred.clone(), p_pred.clone(), 0.0),
            Some(yi) => {
                let pht = &p_pred * &ht;
                let innov_var = (&ssm.h * &pht)[(0, 0)] + s;
                if !(innov_var > 0.0) {
                    return Err(Error::InnovationVariance(i));
                }
                let e = yi - (&ssm.h * &m_pred)[(0, 0)];
                let gain = &pht / innov_var;
                let mean = &m_pred + &gain * e;
                let mut cov = &p_pred - &gain * gain.transpose() * innov_var;
                symmetrize(&mut cov);
                let ll = -0.5 * (LN_2PI + innov_var.ln() + e * e / innov_var);
                (mean, cov, ll)
            }
        };
        out.push(KalmanState {
            predicted_mean: m_pred,
            predicted_cov: p_pred,
            mean,
            cov,
            log_lik,
        });
    }
    Ok(out)
}

fn observed(data: &Dataset) -> Vec<Option<f64>> {
    data.values().iter().map(|v| Some(*v)).collect()
}

/// Filter states at the training times.
pub fn kf_filter(data: &Dataset, ssm: &StateSpaceModel, noise: &NoiseModel) -> Result<Vec<KalmanState>> {
    filter(ssm, data.times(), &observed(data), noise)
}

/// Marginal likelihood by the prediction-error decomposition.
pub fn kf_mll(data: &Dataset, ssm: &StateSpaceModel, noise: &NoiseModel) -> Result<f64> {
    Ok(kf_filter(data, ssm, noise)?.iter().map(|s| s.log_lik).sum())
}

/// Marginal likelihood and gradient by propagating the filter sensitivities
/// alongside the filter. Kernel hyperparameters first, noise variance last.
pub fn kf_mll_gradient(data: &Dataset, ssm: &StateSpaceModel, noise: &NoiseModel) -> Result<(f64, MllGradient)> {
    let b = ssm.state_dim();
    let np = ssm.n_params();
    let s = noise.variance();
    let ht = ssm.h.transpose();
    let times = data.times();
    let y = data.values();
    let mut cache = StepCache::new(ssm, true);

    let mut m = DVector::zeros(b);
    let mut p = DMatrix::zeros(b, b);
    let mut dm = vec![DVector::zeros(b); np + 1];
    let mut dp = vec![DMatrix::zeros(b, b); np + 1];
    let mut mll = 0.0;
    let mut grad = vec![0.0; np + 1];
    for i in 0..times.len() {
        let (m_pred, mut p_pred, dm_pred, dp_pred) = if i == 0 {
            let mut dpp: Vec<DMatrix<f64>> = ssm.params.iter().map(|q| q.d_p_inf.clone()).collect();
            dpp.push(DMatrix::zeros(b, b));
            (DVector::zeros(b), ssm.p_inf.clone(), vec![DVector::zeros(b); np + 1], dpp)
        } else {
            let step = cache.get(times[i] - times[i - 1]);
            let phi = &step.phi;
            let m_pred = phi * &m;
            let p_pred = phi * &p * phi.transpose() + &step.q;
            let mut dms = Vec::with_capacity(np + 1);
            let mut dps = Vec::with_capacity(np + 1);
            for j in 0..=np {
                let mut dmj = phi * &dm[j];
                let mut dpj = phi * &dp[j] * phi.transpose();
                if j < np {
                    let g = &step.grads[j];
                    dmj += &g.d_phi * &m;
                    let a = &g.d_phi * &p * phi.transpose();
                    dpj += &a + a.transpose() + &g.d_q;
                }
                symmetrize(&mut dpj);
                dms.push(dmj);
                dps.push(dpj);
            }
            (m_pred, p_pred, dms, dps)
        };
        symmetrize(&mut p_pred);
        let pht = &p_pred * &ht;
        let sv = (&ssm.h * &pht)[(0, 0)] + s;
        if !(sv > 0.0) {
            return Err(Error::InnovationVariance(i));
        }
        let e = y[i] - (&ssm.h * &m_pred)[(0, 0)];
        let k = &pht / sv;
        mll += -0.5 * (LN_2PI + sv.ln() + e * e / sv);
        m = &m_pred + &k * e;
        p = &p_pred - &k * k.transpose() * sv;
        symmetrize(&mut p);
        for j in 0..=np {
            let mut ds = (&ssm.h * &dp_pred[j] * &ht)[(0, 0)];
            if j == np {
                ds += 1.0;
            }
            let de = -(&ssm.h * &dm_pred[j])[(0, 0)];
            grad[j] += -0.5 * (ds / sv + 2.0 * e * de / sv - e * e * ds / (sv * sv));
            let dk = (&dp_pred[j] * &ht - &k * ds) / sv;
            dm[j] = &dm_pred[j] + &dk * e + &k * de;
            let a = &dk * k.transpose() * sv;
            let mut dpj = &dp_pred[j] - &a - a.transpose() - &k * k.transpose() * ds;
            symmetrize(&mut dpj);
            dp[j] = dpj;
        }
    }
    let mut names: Vec<String> = ssm.params.iter().map(|q| q.name.clone()).collect();
    names.push("noise_variance".to_string());
    let mut values: Vec<f64> = ssm.params.iter().map(|q| q.value).collect();
    values.push(s);
    Ok((
        mll,
        MllGradient {
            names,
            natural: grad,
            values,
        },
    ))
}

/// Filtered and smoothed states over the merged train/test grid.
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub times: Vec<f64>,
    pub observed: Vec<bool>,
    pub filtered: Vec<KalmanState>,
    pub smoothed_mean: Vec<DVector<f64>>,
    pub smoothed_cov: Vec<DMatrix<f64>>,
    /// Node of each requested test time.
    pub test_node: Vec<usize>,
}

/// Filter over training and test times together (test nodes skip the
/// update), then a backward RTS pass. A test time equal to a training time
/// is placed just before it with a zero gap.
pub fn kf_rts_smooth(
    data: &Dataset,
    ssm: &StateSpaceModel,
    noise: &NoiseModel,
    test_times: &[f64],
) -> Result<SmootherOutput> {
    if let Some(i) = test_times.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    // (time, is_train, source)
    let mut nodes: Vec<(f64, bool, usize)> = data.times().iter().enumerate().map(|(i, t)| (*t, true, i)).collect();
    nodes.extend(test_times.iter().enumerate().map(|(j, t)| (*t, false, j)));
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let times: Vec<f64> = nodes.iter().map(|n| n.0).collect();
    let y: Vec<Option<f64>> = nodes
        .iter()
        .map(|&(_, tr, src)| if tr { Some(data.values()[src]) } else { None })
        .collect();
    let mut test_node = vec![0; test_times.len()];
    for (k, &(_, tr, src)) in nodes.iter().enumerate() {
        if !tr {
            test_node[src] = k;
        }
    }
    let filtered = filter(ssm, &times, &y, noise)?;
    let n = times.len();
    let mut cache = StepCache::new(ssm, false);
    let mut smoothed_mean = vec![DVector::zeros(0); n];
    let mut smoothed_cov = vec![DMatrix::zeros(0, 0); n];
    smoothed_mean[n - 1] = filtered[n - 1].mean.clone();
    smoothed_cov[n - 1] = filtered[n - 1].cov.clone();
    for k in (0..n - 1).rev() {
        let phi = cache.get(times[k + 1] - times[k]).phi.clone();
        let next = &filtered[k + 1];
        let cur = &filtered[k];
        let pred_chol = cholesky(next.predicted_cov.clone()).ok_or(Error::NotPositiveDefinite(k + 1))?;
        // G = P_k·Φᵀ·(P⁻_{k+1})⁻¹
        let gain = pred_chol.solve(&(&phi * &cur.cov)).transpose();
        let mean = &cur.mean + &gain * (&smoothed_mean[k + 1] - &next.predicted_mean);
        let mut cov = &cur.cov + &gain * (&smoothed_cov[k + 1] - &next.predicted_cov) * gain.transpose();
        symmetrize(&mut cov);
        smoothed_mean[k] = mean;
        smoothed_cov[k] = cov;
    }
    Ok(SmootherOutput {
        observed: y.iter().map(|v| v.is_some()).collect(),
        times,
        filtered,
        smoothed_mean,
        smoothed_cov,
        test_node,
    })
}

/// Smoothed latent means and variances at `test_times`.
pub fn kf_rts_predict(
    data: &Dataset,
    ssm: &StateSpaceModel,
    noise: &NoiseModel,
    test_times: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let out = kf_rts_smooth(data, ssm, noise, test_times)?;
    let ht = ssm.h.transpose();
    let mean = out
        .test_node
        .iter()
        .map(|&k| (&ssm.h * &out.smoothed_mean[k])[(0, 0)])
        .collect();
    let var = out
        .test_node
        .iter()
        .map(|&k| {
            let v = (&ssm.h * &out.smoothed_cov[k] * &ht)[(0, 0)];
            if v < -NEGATIVE_VARIANCE_TOL {
                Err(Error::NegativeVariance { index: k, value: v })
            } else {
                Ok(v.max(0.0))
            }
        })
        .collect::<Result<_>>()?;
    Ok((mean, var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::state_space_of;
    use approx::assert_relative_eq;

    fn setup() -> (Dataset, KernelSpec, Hyperparameters, NoiseModel) {
        let times: Vec<f64> = (0..25).map(|i| i as f64 * 0.4 + 0.05 * (i % 3) as f64).collect();
        let y = times.iter().map(|t| (0.7 * t).sin() + 0.1 * (3.1 * t).cos()).collect();
        (
            Dataset::new(times, y).unwrap(),
            KernelSpec::Matern32,
            Hyperparameters::new(vec![1.2, 1.7]),
            NoiseModel::new(0.05).unwrap(),
        )
    }

    #[test]
    fn single_point_closed_form() {
        let spec = KernelSpec::Matern52;
        let theta = Hyperparameters::new(vec![0.7, 2.0]);
        let noise = NoiseModel::new(0.3).unwrap();
        let data = Dataset::new(vec![1.0], vec![-0.4]).unwrap();
        let var: f64 = 1.0;
        let expected = -0.5 * (0.16 / var + var.ln() + LN_2PI);
        assert_relative_eq!(dense_gp_mll(&data, &spec, &theta, &noise).unwrap(), expected, max_relative = 1e-12);
        let ssm = state_space_of(&spec, &theta).unwrap();
        assert_relative_eq!(kf_mll(&data, &ssm, &noise).unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn kf_matches_dense() {
        let (data, spec, theta, noise) = setup();
        let ssm = state_space_of(&spec, &theta).unwrap();
        let d = dense_gp_mll(&data, &spec, &theta, &noise).unwrap();
        let k = kf_mll(&data, &ssm, &noise).unwrap();
        assert_relative_eq!(d, k, max_relative = 1e-10);
    }

    #[test]
    fn gradients_agree() {
        let (data, spec, theta, noise) = setup();
        let ssm = state_space_of(&spec, &theta).unwrap();
        let (_, gd) = dense_gp_mll_gradient(&data, &spec, &theta, &noise).unwrap();
        let (_, gk) = kf_mll_gradient(&data, &ssm, &noise).unwrap();
        for (a, b) in gd.natural.iter().zip(&gk.natural) {
            assert_relative_eq!(a, b, max_relative = 1e-7);
        }
    }

    #[test]
    fn smoother_matches_dense() {
        let (data, spec, theta, noise) = setup();
        let ssm = state_space_of(&spec, &theta).unwrap();
        let test = [-1.0, 0.4, 3.3, 9.9, 12.0];
        let d = dense_gp_predict(&data, &spec, &theta, &noise, &test).unwrap();
        let (m, v) = kf_rts_predict(&data, &ssm, &noise, &test).unwrap();
        for j in 0..test.len() {
            assert!((d.mean[j] - m[j]).abs() < 1e-9);
            assert!((d.variance[j] - v[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn dense_cap() {
        let (data, spec, theta, noise) = setup();
        assert_eq!(
            dense_gp_mll_capped(&data, &spec, &theta, &noise, 10).unwrap_err(),
            Error::TooLarge { n: 25, cap: 10 }
        );
    }
}
