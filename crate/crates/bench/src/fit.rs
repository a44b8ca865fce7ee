//! Hyperparameter fits and predictions with a selectable method.

use spingp::baselines::{dense_gp_mll_gradient, dense_gp_predict, kf_mll, kf_mll_gradient, kf_rts_predict};
use spingp::engine::{predict, Dataset, NoiseModel};
use spingp::kernel::{state_space_of, Hyperparameters, KernelSpec};
use spingp::optimize::{maximize, optimize_hyperparameters, OptimizeOptions, Termination};

use crate::config::Method;
use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta: Hyperparameters,
    pub noise: NoiseModel,
    pub mll: f64,
    pub iterations: usize,
    pub termination: Termination,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::GradientNorm | Termination::RelativeChange)
    }
}

fn no_gradient(method: Method) -> BenchError {
    BenchError::Config(format!("method {method} provides no gradient and cannot fit"))
}

/// Maximizes the MLL over log hyperparameters and log noise variance.
pub fn fit(
    method: Method,
    data: &Dataset,
    spec: &KernelSpec,
    theta0: &Hyperparameters,
    noise0: &NoiseModel,
    budget: usize,
) -> Result<FitResult> {
    if method == Method::Spingp {
        let r = optimize_hyperparameters(data, spec, theta0, noise0, budget)?;
        return Ok(FitResult {
            theta: r.theta,
            noise: r.noise,
            mll: r.mll,
            iterations: r.iterations,
            termination: r.termination,
        });
    }
    if method == Method::SpingpCr {
        return Err(no_gradient(method));
    }
    theta0.check_for(spec)?;
    let mut x0 = theta0.to_log();
    x0.push(noise0.variance().ln());
    let objective = |x: &[f64]| {
        let (k, n) = x.split_at(x.len() - 1);
        let theta = Hyperparameters::from_log(k);
        let noise = NoiseModel::new(n[0].exp())?;
        let (mll, g) = match method {
            Method::Kf => kf_mll_gradient(data, &state_space_of(spec, &theta)?, &noise)?,
            _ => dense_gp_mll_gradient(data, spec, &theta, &noise)?,
        };
        Ok((mll, g.log_space()))
    };
    let m = maximize(objective, &x0, budget, &OptimizeOptions::default())?;
    let (k, n) = m.x.split_at(m.x.len() - 1);
    Ok(FitResult {
        theta: Hyperparameters::from_log(k),
        noise: NoiseModel::new(n[0].exp())?,
        mll: m.value,
        iterations: m.iterations,
        termination: m.termination,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub mll: f64,
}

/// Posterior marginals at `test` in the normalized units of `data`.
pub fn predict_with(
    method: Method,
    data: &Dataset,
    spec: &KernelSpec,
    theta: &Hyperparameters,
    noise: &NoiseModel,
    test: &[f64],
    include_noise: bool,
) -> Result<Prediction> {
    let extra = if include_noise { noise.variance() } else { 0.0 };
    Ok(match method {
        Method::Spingp => {
            let p = predict(data, spec, theta, noise, test, include_noise)?;
            Prediction {
                mean: p.mean,
                variance: p.variance,
                mll: p.mll,
            }
        }
        Method::Kf => {
            let ssm = state_space_of(spec, theta)?;
            let (mean, var) = kf_rts_predict(data, &ssm, noise, test)?;
            Prediction {
                mean,
                variance: var.iter().map(|v| v + extra).collect(),
                mll: kf_mll(data, &ssm, noise)?,
            }
        }
        Method::Dense => {
            let p = dense_gp_predict(data, spec, theta, noise, test)?;
            Prediction {
                mean: p.mean,
                variance: p.variance.iter().map(|v| v + extra).collect(),
                mll: p.mll,
            }
        }
        Method::SpingpCr => return Err(BenchError::Config("spingp-cr does not predict".into())),
    })
}
