//! Timing sweeps over the series length N and the state dimension b.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;
use spingp::baselines::{dense_gp_mll_gradient, kf_mll_gradient};
use spingp::btd::cr_solve_in;
use spingp::engine::{mll_and_gradient, Dataset, Engine, NoiseModel};
use spingp::kernel::{state_space_of, Hyperparameters, KernelSpec};

use crate::config::{ExperimentConfig, Method};
use crate::error::Result;
use crate::kernel_expr::{kernel_for_block_size, KernelExpr};
use crate::synth::{generate_sinusoid_data, SinusoidConfig};
use crate::timing::{loglog_slope, median_time, peak_rss_kb};

/// Swept quantity of a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    N,
    B,
}

/// One (method, x) cell. A failed cell keeps its error message and has no
/// timing or MLL.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub method: Method,
    pub x: usize,
    pub n: usize,
    pub b: usize,
    pub kernel: String,
    pub median_seconds: Option<f64>,
    pub mll: Option<f64>,
    pub peak_rss_kb: Option<u64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub sweep: Sweep,
    pub seed: u64,
    pub repetitions: usize,
    pub noise_variance: f64,
    pub sinusoid: SinusoidConfig,
    /// Sorted by `x`, then by method in configuration order.
    pub rows: Vec<ScalingRow>,
    /// Log-log slope of median time against `x`, per method. Methods with
    /// fewer than two successful cells are absent.
    pub slopes: BTreeMap<String, f64>,
}

impl ScalingReport {
    pub fn has_errors(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }

    pub fn slope(&self, method: Method) -> Option<f64> {
        self.slopes.get(method.name()).copied()
    }
}

/// MLL of `method` at the given parameters. Every method except
/// [`Method::SpingpCr`] also computes the gradient.
pub fn evaluate(
    method: Method,
    data: &Dataset,
    spec: &KernelSpec,
    theta: &Hyperparameters,
    noise: &NoiseModel,
    pool: Option<&rayon::ThreadPool>,
) -> Result<f64> {
    Ok(match method {
        Method::Spingp => mll_and_gradient(data, spec, theta, noise)?.0,
        Method::Kf => kf_mll_gradient(data, &state_space_of(spec, theta)?, noise)?.0,
        Method::Dense => dense_gp_mll_gradient(data, spec, theta, noise)?.0,
        Method::SpingpCr => {
            let pool = pool.expect("thread pool for cyclic reduction");
            cr_mll(pool, data, spec, theta, noise)?
        }
    })
}

/// MLL from the formed prior and posterior precisions, both factored by
/// cyclic reduction.
pub fn cr_mll(
    pool: &rayon::ThreadPool,
    data: &Dataset,
    spec: &KernelSpec,
    theta: &Hyperparameters,
    noise: &NoiseModel,
) -> Result<f64> {
    let ssm = state_space_of(spec, theta)?;
    let b = ssm.state_dim();
    let n = data.len();
    let s = noise.variance();
    let prior = Engine::default().assemble_prior_precision(data.times(), &ssm)?;
    let prior_logdet = cr_solve_in(pool, &prior, &DMatrix::zeros(n * b, 1))?.logdet;
    let mut post = prior;
    let hth = ssm.h.transpose() * &ssm.h / s;
    for d in post.diag_mut() {
        *d += &hth;
    }
    let y = data.values();
    let v = DMatrix::from_fn(n * b, 1, |r, _| ssm.h[r % b] * y[r / b] / s);
    let sol = cr_solve_in(pool, &post, &v)?;
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    Ok(-0.5 * (yy / s - v.dot(&sol.x))
        - 0.5 * (sol.logdet - prior_logdet + n as f64 * s.ln())
        - 0.5 * n as f64 * ln_2pi)
}

struct Cell {
    method: Method,
    x: usize,
    n: usize,
    expr: KernelExpr,
}

fn run_cell(cell: &Cell, cfg: &ExperimentConfig) -> ScalingRow {
    let mut row = ScalingRow {
        method: cell.method,
        x: cell.x,
        n: cell.n,
        b: cell.expr.state_dim(),
        kernel: cell.expr.to_string(),
        median_seconds: None,
        mll: None,
        peak_rss_kb: None,
        error: None,
    };
    let outcome = (|| -> Result<(f64, f64)> {
        let data = generate_sinusoid_data(cell.n, cfg.seed, &cfg.sinusoid)?;
        let noise = NoiseModel::new(cfg.noise_variance())?;
        let (spec, theta) = (cell.expr.spec(), cell.expr.theta());
        let pool = match cell.method {
            Method::SpingpCr => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()
                    .map_err(|e| crate::error::BenchError::Config(e.to_string()))?,
            ),
            _ => None,
        };
        median_time(cfg.repetitions, || {
            evaluate(cell.method, &data, &spec, &theta, &noise, pool.as_ref())
        })
    })();
    match outcome {
        Ok((secs, mll)) => {
            row.median_seconds = Some(secs);
            row.mll = Some(mll);
            row.peak_rss_kb = peak_rss_kb();
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

fn run_cells(sweep: Sweep, cells: Vec<Cell>, cfg: &ExperimentConfig) -> ScalingReport {
    let mut rows: Vec<ScalingRow> = if cfg.parallel_cells {
        std::thread::scope(|s| {
            let handles: Vec<_> = cells.iter().map(|c| s.spawn(|| run_cell(c, cfg))).collect();
            handles.into_iter().map(|h| h.join().expect("cell thread panicked")).collect()
        })
    } else {
        cells.iter().map(|c| run_cell(c, cfg)).collect()
    };
    let order = |m: Method| cfg.methods.iter().position(|x| *x == m).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (r.x, order(r.method)));
    let mut slopes = BTreeMap::new();
    for m in &cfg.methods {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.method == *m)
            .filter_map(|r| r.median_seconds.map(|s| (r.x as f64, s)))
            .collect();
        if let Some(k) = loglog_slope(&pts).filter(|k| k.is_finite()) {
            slopes.insert(m.name().to_string(), k);
        }
    }
    ScalingReport {
        sweep,
        seed: cfg.seed,
        repetitions: cfg.repetitions,
        noise_variance: cfg.noise_variance(),
        sinusoid: cfg.sinusoid,
        rows,
        slopes,
    }
}

fn dedup_sorted(xs: &[usize]) -> Vec<usize> {
    let mut v = xs.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Times MLL plus gradient for every N of `cfg.sweep` and every method.
pub fn run_scaling_n(cfg: &ExperimentConfig) -> Result<ScalingReport> {
    cfg.validate()?;
    let expr = cfg.kernel_expr()?;
    let cells = dedup_sorted(&cfg.sweep)
        .into_iter()
        .flat_map(|n| {
            let expr = expr.clone();
            cfg.methods.iter().map(move |&method| Cell {
                method,
                x: n,
                n,
                expr: expr.clone(),
            })
        })
        .collect();
    Ok(run_cells(Sweep::N, cells, cfg))
}

/// Times MLL plus gradient at fixed `cfg.n` for kernels of state dimension
/// `b` from `cfg.sweep` (see [`kernel_for_block_size`]).
pub fn run_scaling_b(cfg: &ExperimentConfig) -> Result<ScalingReport> {
    cfg.validate()?;
    let cells = dedup_sorted(&cfg.sweep)
        .into_iter()
        .flat_map(|b| {
            cfg.methods.iter().map(move |&method| Cell {
                method,
                x: b,
                n: cfg.n,
                expr: kernel_for_block_size(b),
            })
        })
        .collect();
    Ok(run_cells(Sweep::B, cells, cfg))
}
