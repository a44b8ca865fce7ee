use nalgebra::DMatrix;

use super::StateSpaceModel;
use crate::error::{Error, Result};
use crate::linalg::{expm, expm_frechet, symmetrize};

/// Transition and process noise of a state-space model over one time gap.
#[derive(Debug, Clone)]
pub struct DiscreteStep {
    pub phi: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Derivatives, one per requested hyperparameter.
    pub grads: Vec<StepGradient>,
}

#[derive(Debug, Clone)]
pub struct StepGradient {
    pub d_phi: DMatrix<f64>,
    pub d_q: DMatrix<f64>,
}

fn transition(ssm: &StateSpaceModel, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = ssm.state_dim();
    if dt == 0.0 {
        return (DMatrix::identity(b, b), DMatrix::zeros(b, b));
    }
    let phi = expm(&(&ssm.f * dt));
    let mut q = &ssm.p_inf - &phi * &ssm.p_inf * phi.transpose();
    symmetrize(&mut q);
    (phi, q)
}

fn gradient(ssm: &StateSpaceModel, phi: &DMatrix<f64>, dt: f64, index: usize) -> StepGradient {
    let b = ssm.state_dim();
    let p = &ssm.params[index];
    if dt == 0.0 {
        return StepGradient {
            d_phi: DMatrix::zeros(b, b),
            d_q: DMatrix::zeros(b, b),
        };
    }
    let d_phi = if p.is_magnitude_only() {
        DMatrix::zeros(b, b)
    } else {
        expm_frechet(&ssm.f, &p.d_f, dt).1
    };
    let a = &d_phi * &ssm.p_inf * phi.transpose();
    let mut d_q = &p.d_p_inf - &a - a.transpose() - phi * &p.d_p_inf * phi.transpose();
    symmetrize(&mut d_q);
    StepGradient { d_phi, d_q }
}

/// `Φ = expm(F·dt)`, `Q = P∞ − Φ·P∞·Φᵀ`.
pub fn discretize(ssm: &StateSpaceModel, dt: f64) -> DiscreteStep {
    assert!(dt >= 0.0, "time gap must be non-negative");
    let (phi, q) = transition(ssm, dt);
    DiscreteStep {
        phi,
        q,
        grads: Vec::new(),
    }
}

/// Like [`discretize`] with the derivative with respect to one hyperparameter.
pub fn discretize_with_grad(ssm: &StateSpaceModel, dt: f64, theta_index: usize) -> Result<DiscreteStep> {
    if theta_index >= ssm.n_params() {
        return Err(Error::UnknownHyperparameter(theta_index));
    }
    let mut step = discretize(ssm, dt);
    step.grads.push(gradient(ssm, &step.phi, dt, theta_index));
    Ok(step)
}

/// Like [`discretize`] with derivatives for every hyperparameter.
pub fn discretize_all(ssm: &StateSpaceModel, dt: f64) -> DiscreteStep {
    let mut step = discretize(ssm, dt);
    step.grads = (0..ssm.n_params())
        .map(|i| gradient(ssm, &step.phi, dt, i))
        .collect();
    step
}
