use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use spingp::engine::NoiseModel;
use spingp_bench::co2::{run_co2_forecast, Co2Config};
use spingp_bench::config::{ExperimentConfig, Method};
use spingp_bench::fit::{fit, predict_with};
use spingp_bench::kernel_expr::KernelExpr;
use spingp_bench::report::{read_series, write_csv, write_json, write_series};
use spingp_bench::scaling::{run_scaling_b, run_scaling_n, ScalingReport};
use spingp_bench::synth::generate_sinusoid_data;
use spingp_bench::{BenchError, Result};

#[derive(Parser)]
#[command(name = "spingp-bench", version, about = "Temporal GP experiments: fits, forecasts and scaling sweeps")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value settings applied before any flag
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Kernel expression, e.g. "matern32(var=1, len=2) + eq(order=10)"
    #[arg(long, global = true)]
    kernel: Option<String>,
    /// spingp, kf, dense or spingp-cr; comma separated for sweeps
    #[arg(long, global = true)]
    method: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for cyclic reduction
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    repetitions: Option<usize>,
    /// Run sweep cells concurrently (timings are then not meaningful)
    #[arg(long, global = true)]
    parallel_cells: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a two-sinusoid series to data.csv
    GenData {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit hyperparameters and noise variance
    Fit {
        /// time,value CSV; a synthetic series when absent
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        noise_variance: Option<f64>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Posterior mean and variance on a regular grid
    Predict {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        noise_variance: Option<f64>,
        /// Grid start
        #[arg(long, allow_negative_numbers = true)]
        from: Option<f64>,
        /// Grid end
        #[arg(long, allow_negative_numbers = true)]
        to: Option<f64>,
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Add the observation noise to the variances
        #[arg(long)]
        include_noise: bool,
    },
    /// Time MLL plus gradient over series lengths
    ScalingN {
        /// Comma separated N values
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Time MLL plus gradient over state dimensions
    ScalingB {
        /// Comma separated block sizes
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Eight-year hold-out forecast of a weekly CO₂ record
    Co2 {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
    },
}

fn build_config(common: &Common, defaults: ExperimentConfig) -> Result<ExperimentConfig> {
    let mut cfg = defaults;
    if let Some(p) = &common.config {
        cfg.apply_file(p)?;
    }
    if let Some(k) = &common.kernel {
        cfg.kernel = k.clone();
    }
    if let Some(m) = &common.method {
        cfg.set("methods", m)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(r) = common.repetitions {
        cfg.repetitions = r;
    }
    if common.parallel_cells {
        cfg.parallel_cells = true;
    }
    Ok(cfg)
}

fn single_method(cfg: &ExperimentConfig) -> Result<Method> {
    match cfg.methods.as_slice() {
        [m] => Ok(*m),
        _ => Err(BenchError::Config("exactly one --method expected".into())),
    }
}

fn load_data(cfg: &ExperimentConfig) -> Result<spingp::engine::Dataset> {
    match &cfg.input {
        Some(p) => read_series(p),
        None => generate_sinusoid_data(cfg.n, cfg.seed, &cfg.sinusoid),
    }
}

#[derive(Serialize)]
struct FitMetrics<'a> {
    config: &'a ExperimentConfig,
    method: Method,
    n: usize,
    initial_kernel: String,
    kernel: String,
    theta: Vec<f64>,
    noise_variance: f64,
    mll: f64,
    iterations: usize,
    termination: String,
    converged: bool,
}

#[derive(Serialize)]
struct PredictRow {
    time: f64,
    mean: f64,
    variance: f64,
}

#[derive(Serialize)]
struct PredictMetrics<'a> {
    config: &'a ExperimentConfig,
    method: Method,
    n: usize,
    kernel: String,
    noise_variance: f64,
    mll: f64,
    includes_noise: bool,
}

#[derive(Serialize)]
struct DataMetrics<'a> {
    config: &'a ExperimentConfig,
    n: usize,
}

/// Report and summary for a sweep. Returns whether any cell failed.
fn write_scaling(dir: &Path, cfg: &ExperimentConfig, rep: &ScalingReport) -> Result<bool> {
    #[derive(Serialize)]
    struct Summary<'a> {
        config: &'a ExperimentConfig,
        report: &'a ScalingReport,
    }
    write_csv(&dir.join("report.csv"), &rep.rows)?;
    write_json(&dir.join("metrics.json"), &Summary { config: cfg, report: rep })?;
    for r in &rep.rows {
        match (&r.error, r.median_seconds) {
            (Some(e), _) => eprintln!("{:>10} x={:<6} error: {e}", r.method.name(), r.x),
            (None, Some(s)) => println!("{:>10} x={:<6} {s:.6e} s  mll={:.10e}", r.method.name(), r.x, r.mll.unwrap_or(f64::NAN)),
            _ => {}
        }
    }
    for (m, k) in &rep.slopes {
        println!("slope {m}: {k:.3}");
    }
    Ok(rep.has_errors())
}

/// Runs the command; `Ok(true)` when a sub-run failed but results were written.
fn run(cli: Cli) -> Result<bool> {
    let common = &cli.common;
    match cli.command {
        Command::GenData { n } => {
            let mut cfg = build_config(common, ExperimentConfig::default())?;
            if let Some(n) = n {
                cfg.n = n;
            }
            cfg.validate()?;
            let data = generate_sinusoid_data(cfg.n, cfg.seed, &cfg.sinusoid)?;
            write_series(&cfg.out.join("data.csv"), &data)?;
            write_json(&cfg.out.join("metrics.json"), &DataMetrics { config: &cfg, n: data.len() })?;
            println!("wrote {} points to {}", data.len(), cfg.out.join("data.csv").display());
            Ok(false)
        }
        Command::Fit {
            input,
            n,
            noise_variance,
            budget,
        } => {
            let mut cfg = build_config(common, ExperimentConfig::default())?;
            cfg.input = input.or(cfg.input);
            cfg.n = n.unwrap_or(cfg.n);
            cfg.noise_variance = noise_variance.or(cfg.noise_variance);
            cfg.budget = budget.unwrap_or(cfg.budget);
            cfg.validate()?;
            let method = single_method(&cfg)?;
            let data = load_data(&cfg)?.centered();
            let expr = cfg.kernel_expr()?;
            let noise0 = NoiseModel::new(cfg.noise_variance())?;
            let r = fit(method, &data, &expr.spec(), &expr.theta(), &noise0, cfg.budget)?;
            let fitted = expr.with_theta(&r.theta);
            println!("{fitted}  noise={}  mll={}  ({} iterations)", r.noise.variance(), r.mll, r.iterations);
            write_json(
                &cfg.out.join("metrics.json"),
                &FitMetrics {
                    config: &cfg,
                    method,
                    n: data.len(),
                    initial_kernel: expr.to_string(),
                    kernel: fitted.to_string(),
                    theta: r.theta.values().to_vec(),
                    noise_variance: r.noise.variance(),
                    mll: r.mll,
                    iterations: r.iterations,
                    termination: format!("{:?}", r.termination),
                    converged: r.converged(),
                },
            )?;
            Ok(false)
        }
        Command::Predict {
            input,
            n,
            noise_variance,
            from,
            to,
            points,
            include_noise,
        } => {
            let mut cfg = build_config(common, ExperimentConfig::default())?;
            cfg.input = input.or(cfg.input);
            cfg.n = n.unwrap_or(cfg.n);
            cfg.noise_variance = noise_variance.or(cfg.noise_variance);
            cfg.validate()?;
            let method = single_method(&cfg)?;
            let data = load_data(&cfg)?.centered();
            let expr: KernelExpr = cfg.kernel_expr()?;
            let noise = NoiseModel::new(cfg.noise_variance())?;
            let t = data.times();
            let (lo, hi) = (from.unwrap_or(t[0]), to.unwrap_or(t[t.len() - 1]));
            let grid: Vec<f64> = match points {
                0 => Vec::new(),
                1 => vec![lo],
                p => (0..p).map(|k| lo + (hi - lo) * k as f64 / (p - 1) as f64).collect(),
            };
            let p = predict_with(method, &data, &expr.spec(), &expr.theta(), &noise, &grid, include_noise)?;
            let rows: Vec<PredictRow> = grid
                .iter()
                .zip(p.mean.iter().zip(&p.variance))
                .map(|(&time, (m, v))| PredictRow {
                    time,
                    mean: data.denormalize_mean(*m),
                    variance: data.denormalize_variance(*v),
                })
                .collect();
            write_csv(&cfg.out.join("forecast.csv"), &rows)?;
            write_json(
                &cfg.out.join("metrics.json"),
                &PredictMetrics {
                    config: &cfg,
                    method,
                    n: data.len(),
                    kernel: expr.to_string(),
                    noise_variance: noise.variance(),
                    mll: p.mll,
                    includes_noise: include_noise,
                },
            )?;
            println!("mll={}  wrote {} predictions", p.mll, rows.len());
            Ok(false)
        }
        Command::ScalingN { sweep } => {
            let mut cfg = build_config(common, ExperimentConfig::default())?;
            if let Some(s) = sweep {
                cfg.set("sweep", &s)?;
            }
            let rep = run_scaling_n(&cfg)?;
            write_scaling(&cfg.out, &cfg, &rep)
        }
        Command::ScalingB { sweep, n } => {
            let defaults = ExperimentConfig {
                sweep: vec![2, 4, 8, 12, 16],
                n: 1000,
                ..ExperimentConfig::default()
            };
            let mut cfg = build_config(common, defaults)?;
            if let Some(s) = sweep {
                cfg.set("sweep", &s)?;
            }
            cfg.n = n.unwrap_or(cfg.n);
            let rep = run_scaling_b(&cfg)?;
            write_scaling(&cfg.out, &cfg, &rep)
        }
        Command::Co2 { input, budget } => {
            let cfg = build_config(common, ExperimentConfig::default())?;
            let mut co2 = Co2Config::new(input);
            co2.kernel = common.kernel.clone();
            co2.budget = budget.unwrap_or(co2.budget);
            co2.out = Some(cfg.out.clone());
            let outcome = run_co2_forecast(&co2)?;
            let m = &outcome.metrics;
            println!(
                "{} points, {} train, {} held out; baseline RMSE {:.3} ppm",
                m.n_total, m.n_train, m.n_holdout, m.baseline_rmse
            );
            for (name, s) in [("spingp", &m.spingp), ("kf", &m.kf)] {
                match (&s.error, s.holdout_rmse) {
                    (Some(e), _) => eprintln!("{name}: error: {e}"),
                    (None, Some(r)) => println!(
                        "{name}: RMSE {r:.3} ppm after {} iterations ({})",
                        s.iterations.unwrap_or(0),
                        s.termination.as_deref().unwrap_or("?")
                    ),
                    _ => {}
                }
            }
            if let Some(d) = m.max_abs_mean_diff_same_theta {
                println!("max |spingp − kf| at equal hyperparameters: {d:.3e} ppm");
            }
            Ok(m.has_errors())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
