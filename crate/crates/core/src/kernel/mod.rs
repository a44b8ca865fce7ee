//! Stationary temporal kernels and their state-space representations.
//!
//! Every kernel leaf carries two positive hyperparameters, a magnitude
//! `variance` (σ²) and a `lengthscale` (ℓ, in time units). Hyperparameters
//! are stored in a flat [`Hyperparameters`] vector in depth-first leaf order:
//! `[σ²₀, ℓ₀, σ²₁, ℓ₁, …]`.

mod discrete;
mod eq;

pub use discrete::{discretize, discretize_all, discretize_with_grad, DiscreteStep, StepGradient};
pub use eq::eq_approx_ss;

use nalgebra::{DMatrix, RowDVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{block_diag, expm};

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Matern12,
    Matern32,
    Matern52,
    /// Spectral Taylor approximation of the exponentiated-quadratic kernel.
    EqApprox { order: usize },
    Sum(Vec<KernelSpec>),
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::EqApprox { order } => {
                if *order < 2 || *order % 2 != 0 || *order > eq::MAX_ORDER {
                    return Err(Error::InvalidApproxOrder(*order));
                }
                Ok(())
            }
            KernelSpec::Sum(children) => {
                if children.len() < 2 {
                    return Err(Error::InvalidKernel(format!(
                        "sum needs at least two terms, got {}",
                        children.len()
                    )));
                }
                children.iter().try_for_each(KernelSpec::validate)
            }
            _ => Ok(()),
        }
    }

    /// Leaves in depth-first order.
    pub fn leaves(&self) -> Vec<&KernelSpec> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a KernelSpec>) {
        match self {
            KernelSpec::Sum(children) => children.iter().for_each(|c| c.collect_leaves(out)),
            leaf => out.push(leaf),
        }
    }

    pub fn n_params(&self) -> usize {
        2 * self.leaves().len()
    }

    pub fn state_dim(&self) -> usize {
        match self {
            KernelSpec::Matern12 => 1,
            KernelSpec::Matern32 => 2,
            KernelSpec::Matern52 => 3,
            KernelSpec::EqApprox { order } => *order,
            KernelSpec::Sum(children) => children.iter().map(KernelSpec::state_dim).sum(),
        }
    }

    fn leaf_name(&self) -> &'static str {
        match self {
            KernelSpec::Matern12 => "matern12",
            KernelSpec::Matern32 => "matern32",
            KernelSpec::Matern52 => "matern52",
            KernelSpec::EqApprox { .. } => "eq",
            KernelSpec::Sum(_) => "sum",
        }
    }

    /// Names like `matern32_0.variance`, `eq_1.lengthscale`.
    pub fn param_names(&self) -> Vec<String> {
        self.leaves()
            .iter()
            .enumerate()
            .flat_map(|(i, leaf)| {
                let base = format!("{}_{}", leaf.leaf_name(), i);
                [format!("{base}.variance"), format!("{base}.lengthscale")]
            })
            .collect()
    }
}

/// Positive kernel hyperparameters in natural (not log) scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters(Vec<f64>);

impl Hyperparameters {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn from_log(logs: &[f64]) -> Self {
        Self(logs.iter().map(|x| x.exp()).collect())
    }

    pub fn to_log(&self) -> Vec<f64> {
        self.0.iter().map(|x| x.ln()).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks that there is one positive finite value per kernel parameter.
    pub fn check_for(&self, spec: &KernelSpec) -> Result<()> {
        spec.validate()?;
        if self.0.len() != spec.n_params() {
            return Err(Error::DimensionMismatch {
                expected: spec.n_params(),
                got: self.0.len(),
            });
        }
        for (name, v) in spec.param_names().into_iter().zip(&self.0) {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::NonPositiveHyperparameter { name, value: *v });
            }
        }
        Ok(())
    }
}

/// Sensitivities of a state-space model to one hyperparameter.
#[derive(Debug, Clone)]
pub struct ParamBinding {
    pub name: String,
    pub value: f64,
    pub d_f: DMatrix<f64>,
    pub d_p_inf: DMatrix<f64>,
}

impl ParamBinding {
    /// True when the parameter only scales `P∞` (so the transition is unaffected).
    pub fn is_magnitude_only(&self) -> bool {
        self.d_f.iter().all(|x| *x == 0.0)
    }
}

/// Continuous-time linear time-invariant model `dx = F·x dt + noise`,
/// `f(t) = H·x(t)`, with stationary covariance `P∞`.
#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    pub f: DMatrix<f64>,
    pub h: RowDVector<f64>,
    pub p_inf: DMatrix<f64>,
    pub params: Vec<ParamBinding>,
}

impl StateSpaceModel {
    pub fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Implied covariance `H·expm(F·|τ|)·P∞·Hᵀ`.
    pub fn covariance(&self, tau: f64) -> f64 {
        let phi = expm(&(&self.f * tau.abs()));
        (&self.h * phi * &self.p_inf * self.h.transpose())[(0, 0)]
    }

    fn direct_sum(models: Vec<StateSpaceModel>) -> StateSpaceModel {
        let dims: Vec<usize> = models.iter().map(|m| m.state_dim()).collect();
        let total: usize = dims.iter().sum();
        let f = block_diag(&models.iter().map(|m| m.f.clone()).collect::<Vec<_>>());
        let p_inf = block_diag(&models.iter().map(|m| m.p_inf.clone()).collect::<Vec<_>>());
        let h = RowDVector::from_iterator(total, models.iter().flat_map(|m| m.h.iter().copied()));
        let mut params = Vec::new();
        let mut offset = 0;
        for (m, d) in models.into_iter().zip(dims) {
            for p in m.params {
                let mut d_f = DMatrix::zeros(total, total);
                let mut d_p = DMatrix::zeros(total, total);
                d_f.view_mut((offset, offset), (d, d)).copy_from(&p.d_f);
                d_p.view_mut((offset, offset), (d, d)).copy_from(&p.d_p_inf);
                params.push(ParamBinding {
                    name: p.name,
                    value: p.value,
                    d_f,
                    d_p_inf: d_p,
                });
            }
            offset += d;
        }
        StateSpaceModel { f, h, p_inf, params }
    }
}

fn matern12_ss(sigma2: f64, ell: f64) -> (DMatrix<f64>, RowDVector<f64>, DMatrix<f64>, [DMatrix<f64>; 2]) {
    let f = DMatrix::from_element(1, 1, -1.0 / ell);
    let p = DMatrix::from_element(1, 1, sigma2);
    let d_f_ell = DMatrix::from_element(1, 1, 1.0 / (ell * ell));
    let d_p_ell = DMatrix::zeros(1, 1);
    (f, RowDVector::from_element(1, 1.0), p, [d_f_ell, d_p_ell])
}

fn matern32_ss(sigma2: f64, ell: f64) -> (DMatrix<f64>, RowDVector<f64>, DMatrix<f64>, [DMatrix<f64>; 2]) {
    let lam = 3f64.sqrt() / ell;
    let f = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -lam * lam, -2.0 * lam]);
    let p = DMatrix::from_row_slice(2, 2, &[sigma2, 0.0, 0.0, sigma2 * lam * lam]);
    // dλ/dℓ = −λ/ℓ
    let d_f_ell = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0 * lam * lam / ell, 2.0 * lam / ell]);
    let d_p_ell = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -2.0 * sigma2 * lam * lam / ell]);
    (f, RowDVector::from_row_slice(&[1.0, 0.0]), p, [d_f_ell, d_p_ell])
}

fn matern52_ss(sigma2: f64, ell: f64) -> (DMatrix<f64>, RowDVector<f64>, DMatrix<f64>, [DMatrix<f64>; 2]) {
    let lam = 5f64.sqrt() / ell;
    let (l2, l3, l4) = (lam * lam, lam.powi(3), lam.powi(4));
    #[rustfmt::skip]
    let f = DMatrix::from_row_slice(3, 3, &[
        0.0, 1.0, 0.0,
        0.0, 0.0, 1.0,
        -l3, -3.0 * l2, -3.0 * lam,
    ]);
    #[rustfmt::skip]
    let p = DMatrix::from_row_slice(3, 3, &[
        1.0, 0.0, -l2 / 3.0,
        0.0, l2 / 3.0, 0.0,
        -l2 / 3.0, 0.0, l4,
    ]) * sigma2;
    #[rustfmt::skip]
    let d_f_ell = DMatrix::from_row_slice(3, 3, &[
        0.0, 0.0, 0.0,
        0.0, 0.0, 0.0,
        3.0 * l3 / ell, 6.0 * l2 / ell, 3.0 * lam / ell,
    ]);
    #[rustfmt::skip]
    let d_p_ell = DMatrix::from_row_slice(3, 3, &[
        0.0, 0.0, 2.0 * l2 / (3.0 * ell),
        0.0, -2.0 * l2 / (3.0 * ell), 0.0,
        2.0 * l2 / (3.0 * ell), 0.0, -4.0 * l4 / ell,
    ]) * sigma2;
    (f, RowDVector::from_row_slice(&[1.0, 0.0, 0.0]), p, [d_f_ell, d_p_ell])
}

fn leaf_ss(leaf: &KernelSpec, index: usize, sigma2: f64, ell: f64) -> Result<StateSpaceModel> {
    let (f, h, p_inf, [d_f_ell, d_p_ell]) = match leaf {
        KernelSpec::Matern12 => matern12_ss(sigma2, ell),
        KernelSpec::Matern32 => matern32_ss(sigma2, ell),
        KernelSpec::Matern52 => matern52_ss(sigma2, ell),
        KernelSpec::EqApprox { order } => {
            let m = eq::eq_leaf(sigma2, ell, *order)?;
            let d_f_ell = -&m.0 / ell;
            let b = *order;
            (m.0, m.1, m.2, [d_f_ell, DMatrix::zeros(b, b)])
        }
        KernelSpec::Sum(_) => unreachable!("leaves are never sums"),
    };
    let b = f.nrows();
    let base = format!("{}_{}", leaf.leaf_name(), index);
    let params = vec![
        ParamBinding {
            name: format!("{base}.variance"),
            value: sigma2,
            d_f: DMatrix::zeros(b, b),
            d_p_inf: &p_inf / sigma2,
        },
        ParamBinding {
            name: format!("{base}.lengthscale"),
            value: ell,
            d_f: d_f_ell,
            d_p_inf: d_p_ell,
        },
    ];
    Ok(StateSpaceModel { f, h, p_inf, params })
}

/// Converts a kernel into its continuous-time state-space model.
///
/// Sums become block-diagonal `F`/`P∞` with concatenated emission rows.
pub fn state_space_of(spec: &KernelSpec, theta: &Hyperparameters) -> Result<StateSpaceModel> {
    theta.check_for(spec)?;
    let models = spec
        .leaves()
        .into_iter()
        .enumerate()
        .map(|(i, leaf)| leaf_ss(leaf, i, theta.0[2 * i], theta.0[2 * i + 1]))
        .collect::<Result<Vec<_>>>()?;
    if models.len() == 1 {
        Ok(models.into_iter().next().unwrap())
    } else {
        Ok(StateSpaceModel::direct_sum(models))
    }
}

/// Closed-form Matérn covariances and their `(σ², ℓ)` derivatives.
fn matern_closed_form(leaf: &KernelSpec, sigma2: f64, ell: f64, tau: f64) -> (f64, f64, f64) {
    let tau = tau.abs();
    match leaf {
        KernelSpec::Matern12 => {
            let e = (-tau / ell).exp();
            (sigma2 * e, e, sigma2 * e * tau / (ell * ell))
        }
        KernelSpec::Matern32 => {
            let r = 3f64.sqrt() * tau / ell;
            let e = (-r).exp();
            let unit = (1.0 + r) * e;
            (sigma2 * unit, unit, sigma2 * r * r * e / ell)
        }
        KernelSpec::Matern52 => {
            let r = 5f64.sqrt() * tau / ell;
            let e = (-r).exp();
            let unit = (1.0 + r + r * r / 3.0) * e;
            (sigma2 * unit, unit, sigma2 * r * r * (1.0 + r) * e / (3.0 * ell))
        }
        _ => unreachable!(),
    }
}

/// A kernel with bound hyperparameters, evaluable at arbitrary lags.
///
/// Matérn leaves use their closed forms. EQ leaves use the covariance implied
/// by their state-space approximation, evaluated as a sum over the poles of
/// the spectral factor rather than through `expm`.
#[derive(Debug, Clone)]
pub struct Covariance {
    leaves: Vec<LeafCov>,
}

#[derive(Debug, Clone)]
enum LeafCov {
    Matern {
        kind: KernelSpec,
        sigma2: f64,
        ell: f64,
    },
    Eq {
        sigma2: f64,
        ell: f64,
        residues: Vec<(Complex64, Complex64)>,
    },
}

/// `(Re Σ w·e^{p·r}, Re Σ w·p·e^{p·r})` at `r = τ/ℓ`.
fn residue_sum(residues: &[(Complex64, Complex64)], r: f64) -> (f64, f64) {
    residues.iter().fold((0.0, 0.0), |(v, d), (p, w)| {
        let t = w * (p * r).exp();
        (v + t.re, d + (t * p).re)
    })
}

impl Covariance {
    pub fn new(spec: &KernelSpec, theta: &Hyperparameters) -> Result<Self> {
        theta.check_for(spec)?;
        let leaves = spec
            .leaves()
            .into_iter()
            .enumerate()
            .map(|(i, leaf)| {
                let (sigma2, ell) = (theta.0[2 * i], theta.0[2 * i + 1]);
                Ok(match leaf {
                    KernelSpec::EqApprox { order } => {
                        leaf.validate()?;
                        LeafCov::Eq {
                            sigma2,
                            ell,
                            residues: eq::unit_residues(*order)?,
                        }
                    }
                    other => LeafCov::Matern {
                        kind: other.clone(),
                        sigma2,
                        ell,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { leaves })
    }

    pub fn eval(&self, tau: f64) -> f64 {
        self.leaves
            .iter()
            .map(|l| match l {
                LeafCov::Matern { kind, sigma2, ell } => matern_closed_form(kind, *sigma2, *ell, tau).0,
                LeafCov::Eq { sigma2, ell, residues } => sigma2 * residue_sum(residues, tau.abs() / ell).0,
            })
            .sum()
    }

    /// Covariance and its derivative with respect to every hyperparameter.
    pub fn eval_with_grad(&self, tau: f64) -> (f64, Vec<f64>) {
        let mut k = 0.0;
        let mut grad = Vec::with_capacity(2 * self.leaves.len());
        for l in &self.leaves {
            match l {
                LeafCov::Matern { kind, sigma2, ell } => {
                    let (v, ds, dl) = matern_closed_form(kind, *sigma2, *ell, tau);
                    k += v;
                    grad.push(ds);
                    grad.push(dl);
                }
                LeafCov::Eq { sigma2, ell, residues } => {
                    let r = tau.abs() / ell;
                    let (unit, slope) = residue_sum(residues, r);
                    k += sigma2 * unit;
                    grad.push(unit);
                    // ∂/∂ℓ of σ²·u(τ/ℓ) is −σ²·u'(τ/ℓ)·τ/ℓ²
                    grad.push(-sigma2 * slope * r / ell);
                }
            }
        }
        (k, grad)
    }
}

/// Covariance between two time points.
pub fn kernel_eval(spec: &KernelSpec, theta: &Hyperparameters, t: f64, t_prime: f64) -> Result<f64> {
    Ok(Covariance::new(spec, theta)?.eval(t - t_prime))
}

/// Exact exponentiated-quadratic covariance `σ²·exp(−τ²/(2ℓ²))`.
pub fn eq_exact(sigma2: f64, ell: f64, tau: f64) -> f64 {
    sigma2 * (-(tau * tau) / (2.0 * ell * ell)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn th(v: &[f64]) -> Hyperparameters {
        Hyperparameters::new(v.to_vec())
    }

    #[test]
    fn matern32_matrices() {
        let ell = 2.5;
        let m = state_space_of(&KernelSpec::Matern32, &th(&[1.0, ell])).unwrap();
        assert_relative_eq!(m.f[(1, 0)], -3.0 / (ell * ell), max_relative = 1e-15);
        assert_relative_eq!(m.f[(1, 1)], -2.0 * 3f64.sqrt() / ell, max_relative = 1e-15);
        assert_eq!(m.f[(0, 1)], 1.0);
        assert_eq!(m.h.as_slice(), &[1.0, 0.0]);
        assert_relative_eq!(m.p_inf[(1, 1)], 3.0 / (ell * ell), max_relative = 1e-15);
        assert_eq!(m.p_inf[(0, 1)], 0.0);
    }

    #[test]
    fn matern12_matrices() {
        let m = state_space_of(&KernelSpec::Matern12, &th(&[1.0, 4.0])).unwrap();
        assert_eq!(m.state_dim(), 1);
        assert_relative_eq!(m.f[(0, 0)], -0.25);
        assert_eq!(m.p_inf[(0, 0)], 1.0);
        assert_relative_eq!(m.covariance(3.0), (-0.75f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn sum_of_matern32_and_eq10_has_twelve_states() {
        let spec = KernelSpec::Sum(vec![KernelSpec::Matern32, KernelSpec::EqApprox { order: 10 }]);
        let m = state_space_of(&spec, &th(&[1.0, 1.0, 1.0, 3.0])).unwrap();
        assert_eq!(m.state_dim(), 12);
        assert_eq!(m.n_params(), 4);
    }

    #[test]
    fn matern32_value_at_unit_lag() {
        let k = kernel_eval(&KernelSpec::Matern32, &th(&[1.0, 1.0]), 1.0, 0.0).unwrap();
        assert_relative_eq!(k, (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp(), max_relative = 1e-15);
        assert!((k - 0.48335).abs() < 1e-5);
        let k0 = kernel_eval(&KernelSpec::Matern32, &th(&[2.7, 1.0]), 5.0, 5.0).unwrap();
        assert_eq!(k0, 2.7);
    }

    #[test]
    fn kernel_eval_is_symmetric() {
        let spec = KernelSpec::Sum(vec![KernelSpec::Matern52, KernelSpec::EqApprox { order: 6 }]);
        let theta = th(&[1.3, 0.7, 0.4, 2.0]);
        for (a, b) in [(0.0, 1.3), (-2.0, 5.5), (10.0, 9.99)] {
            assert_eq!(
                kernel_eval(&spec, &theta, a, b).unwrap(),
                kernel_eval(&spec, &theta, b, a).unwrap()
            );
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(
            state_space_of(&KernelSpec::Matern32, &th(&[1.0, -1.0])),
            Err(Error::NonPositiveHyperparameter { .. })
        ));
        assert!(matches!(
            state_space_of(&KernelSpec::EqApprox { order: 5 }, &th(&[1.0, 1.0])),
            Err(Error::InvalidApproxOrder(5))
        ));
        assert!(matches!(
            state_space_of(&KernelSpec::EqApprox { order: 0 }, &th(&[1.0, 1.0])),
            Err(Error::InvalidApproxOrder(0))
        ));
        assert!(matches!(
            state_space_of(&KernelSpec::Sum(vec![KernelSpec::Matern12]), &th(&[1.0, 1.0])),
            Err(Error::InvalidKernel(_))
        ));
        assert!(matches!(
            state_space_of(&KernelSpec::Matern12, &th(&[1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn param_names_follow_leaf_order() {
        let spec = KernelSpec::Sum(vec![KernelSpec::Matern32, KernelSpec::EqApprox { order: 4 }]);
        assert_eq!(
            spec.param_names(),
            vec!["matern32_0.variance", "matern32_0.lengthscale", "eq_1.variance", "eq_1.lengthscale"]
        );
    }

    #[test]
    fn closed_form_gradients_match_finite_differences() {
        for spec in [KernelSpec::Matern12, KernelSpec::Matern32, KernelSpec::Matern52, KernelSpec::EqApprox { order: 6 }] {
            let theta = th(&[1.7, 0.9]);
            let cov = Covariance::new(&spec, &theta).unwrap();
            let tau = 0.6;
            let (_, g) = cov.eval_with_grad(tau);
            for j in 0..2 {
                let h = 1e-6 * theta.values()[j];
                let mut up = theta.values().to_vec();
                let mut dn = up.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (Covariance::new(&spec, &th(&up)).unwrap().eval(tau)
                    - Covariance::new(&spec, &th(&dn)).unwrap().eval(tau))
                    / (2.0 * h);
                assert_relative_eq!(g[j], fd, max_relative = 1e-6);
            }
        }
    }
}
