//! Marginal-likelihood maximization in log-parameter space.
//!
//! Limited-memory BFGS ascent with Armijo backtracking. Trial points at which
//! the objective fails (for instance an indefinite precision) are treated as
//! rejected and the step is shortened.

use std::collections::VecDeque;

use crate::engine::{Engine, NoiseModel};
use crate::engine::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{Hyperparameters, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    /// Number of stored curvature pairs.
    pub memory: usize,
    /// Stop when the log-space gradient ∞-norm falls below this.
    pub grad_tol: f64,
    /// Stop when `|Δf| ≤ rel_tol·max(|f|, 1)` over an accepted step.
    pub rel_tol: f64,
    /// Sufficient-increase constant.
    pub c1: f64,
    pub max_backtracks: usize,
    /// Longest step (Euclidean, log-space) tried by the line search.
    pub max_step: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-6,
            rel_tol: 1e-10,
            c1: 1e-4,
            max_backtracks: 40,
            max_step: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientNorm,
    RelativeChange,
    Budget,
    LineSearchFailed,
}

/// One accepted iterate. Entry 0 of a trace is the starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Maximum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub trace: Vec<TracePoint>,
    pub iterations: usize,
    pub termination: Termination,
}

/// Maximizes `f` from `x0`. `f` returns the value and gradient; an error at
/// `x0` is returned as [`Error::InfeasibleStart`].
pub fn maximize<F>(mut f: F, x0: &[f64], budget: usize, opts: &OptimizeOptions) -> Result<Maximum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (mut fx, mut g) = f(x0).map_err(|e| Error::InfeasibleStart(Box::new(e)))?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InfeasibleStart(Box::new(Error::NonFinite(0))));
    }
    let mut x = x0.to_vec();
    let mut trace = vec![TracePoint { x: x.clone(), value: fx }];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;

    let termination = loop {
        if inf_norm(&g) < opts.grad_tol {
            break Termination::GradientNorm;
        }
        if iterations >= budget {
            break Termination::Budget;
        }
        iterations += 1;

        let mut d = ascent_direction(&g, &pairs);
        let mut slope = dot(&d, &g);
        if !(slope > 0.0) {
            // curvature information went bad; fall back to steepest ascent
            pairs.clear();
            d = g.clone();
            slope = dot(&d, &g);
        }
        let len = norm(&d);
        let mut step = if len > opts.max_step { opts.max_step / len } else { 1.0 };

        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            if let Ok((ft, gt)) = f(&trial) {
                let finite = ft.is_finite() && gt.iter().all(|v| v.is_finite());
                if finite && ft >= fx + opts.c1 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break Termination::LineSearchFailed;
        };

        // curvature pair for the maximization of f (minimization of −f)
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * norm(&s) * norm(&y) {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y));
        }

        let change = (f_new - fx).abs();
        let scale = fx.abs().max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        trace.push(TracePoint { x: x.clone(), value: fx });
        if change <= opts.rel_tol * scale {
            break Termination::RelativeChange;
        }
    };

    Ok(Maximum {
        x,
        value: fx,
        gradient: g,
        trace,
        iterations,
        termination,
    })
}

/// Two-loop recursion: `H·g` with the inverse-Hessian estimate of `−f`.
fn ascent_direction(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        axpy(-a, y, &mut q);
        alphas.push((a, rho));
    }
    if let Some((s, y)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), (a, rho)) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        axpy(a - b, s, &mut q);
    }
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// Result of a hyperparameter fit.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub theta: Hyperparameters,
    pub noise: NoiseModel,
    pub mll: f64,
    /// MLL at the start and after every accepted step (non-decreasing).
    pub trace: Vec<f64>,
    /// Parameters matching each trace entry.
    pub trace_params: Vec<(Hyperparameters, NoiseModel)>,
    pub iterations: usize,
    pub termination: Termination,
    pub line_search_failed: bool,
}

fn unpack(x: &[f64]) -> Result<(Hyperparameters, NoiseModel)> {
    let (k, n) = x.split_at(x.len() - 1);
    Ok((Hyperparameters::from_log(k), NoiseModel::new(n[0].exp())?))
}

/// Fits kernel hyperparameters and noise variance by maximizing the log
/// marginal likelihood with `engine`.
pub fn optimize_with(
    engine: &Engine,
    data: &Dataset,
    spec: &KernelSpec,
    theta0: &Hyperparameters,
    noise0: &NoiseModel,
    budget: usize,
    opts: &OptimizeOptions,
) -> Result<OptimizeResult> {
    theta0.check_for(spec)?;
    let mut x0 = theta0.to_log();
    x0.push(noise0.variance().ln());
    let objective = |x: &[f64]| {
        let (theta, noise) = unpack(x)?;
        let (mll, grad) = engine.mll_and_gradient(data, spec, &theta, &noise)?;
        Ok((mll, grad.log_space()))
    };
    let max = maximize(objective, &x0, budget, opts)?;
    let (theta, noise) = unpack(&max.x)?;
    let trace_params = max
        .trace
        .iter()
        .map(|p| unpack(&p.x))
        .collect::<Result<Vec<_>>>()?;
    Ok(OptimizeResult {
        theta,
        noise,
        mll: max.value,
        trace: max.trace.iter().map(|p| p.value).collect(),
        trace_params,
        iterations: max.iterations,
        line_search_failed: max.termination == Termination::LineSearchFailed,
        termination: max.termination,
    })
}

pub fn optimize_hyperparameters(
    data: &Dataset,
    spec: &KernelSpec,
    theta0: &Hyperparameters,
    noise0: &NoiseModel,
    budget: usize,
) -> Result<OptimizeResult> {
    optimize_with(&Engine::default(), data, spec, theta0, noise0, budget, &OptimizeOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = [-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((-f, g.iter().map(|v| -v).collect()))
    }

    #[test]
    fn finds_rosenbrock_maximum() {
        let m = maximize(rosenbrock, &[-1.2, 1.0], 500, &OptimizeOptions::default()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m.x);
        for w in m.trace.windows(2) {
            assert!(w[1].value >= w[0].value);
        }
    }

    #[test]
    fn quadratic_converges_on_gradient() {
        let f = |x: &[f64]| Ok((-(x[0] - 3.0).powi(2) - 2.0 * x[1].powi(2), vec![-2.0 * (x[0] - 3.0), -4.0 * x[1]]));
        let m = maximize(f, &[0.0, 1.0], 50, &OptimizeOptions::default()).unwrap();
        assert!(matches!(m.termination, Termination::GradientNorm | Termination::RelativeChange));
        assert!((m.x[0] - 3.0).abs() < 1e-5 && m.x[1].abs() < 1e-5, "{:?}", m.x);
        assert!(m.iterations < 10);
    }

    #[test]
    fn budget_is_respected() {
        let m = maximize(rosenbrock, &[-1.2, 1.0], 3, &OptimizeOptions::default()).unwrap();
        assert_eq!(m.iterations, 3);
        assert_eq!(m.termination, Termination::Budget);
    }

    #[test]
    fn failing_start_is_infeasible() {
        let f = |_: &[f64]| -> Result<(f64, Vec<f64>)> { Err(Error::NotPositiveDefinite(0)) };
        assert!(matches!(
            maximize(f, &[0.0], 10, &OptimizeOptions::default()),
            Err(Error::InfeasibleStart(_))
        ));
    }

    #[test]
    fn failed_trials_shrink_the_step() {
        // objective undefined beyond x = 0.5
        let f = |x: &[f64]| {
            if x[0] > 0.5 {
                Err(Error::NotPositiveDefinite(0))
            } else {
                Ok((x[0], vec![1.0]))
            }
        };
        let m = maximize(f, &[0.0], 20, &OptimizeOptions::default()).unwrap();
        assert!(m.x[0] <= 0.5 && m.x[0] > 0.4);
        assert_eq!(m.termination, Termination::LineSearchFailed);
    }
}
