//! Weekly Mauna Loa CO₂ records: ingestion and the held-out forecast run.
//!
//! Input files follow the NOAA weekly layout: `#` comment lines, comma or
//! whitespace separated columns, a decimal-year column and an average-ppm
//! column, with `-999.99` marking missing weeks.

use std::path::{Path, PathBuf};

use serde::Serialize;
use spingp::engine::{Dataset, NoiseModel};

use crate::config::Method;
use crate::error::{BenchError, Result};
use crate::fit::{fit, predict_with, FitResult, Prediction};
use crate::kernel_expr::KernelExpr;
use crate::report::{write_csv, write_json};

/// Values at or below this are missing-data sentinels.
const SENTINEL: f64 = -999.0;
const DEFAULT_TIME_COLUMN: usize = 3;
const DEFAULT_VALUE_COLUMN: usize = 4;

pub const DEFAULT_CO2_KERNEL: &str = "matern32 + eq(order=10)";
pub const WEEK_IN_YEARS: f64 = 7.0 / 365.25;

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn header_columns(fields: &[&str]) -> Option<(usize, usize)> {
    let lower: Vec<String> = fields.iter().map(|f| f.to_ascii_lowercase()).collect();
    let time = lower.iter().position(|f| f.contains("decimal"))?;
    let value = lower
        .iter()
        .position(|f| f == "average" || f == "ppm" || f == "co2" || f == "value")?;
    Some((time, value))
}

/// Reads a weekly CO₂ file. Sentinel rows are dropped, timestamps must be
/// strictly increasing, and values are mean-centred (the shift is kept in
/// the dataset's normalization).
pub fn ingest_co2_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    let mut cols = (DEFAULT_TIME_COLUMN, DEFAULT_VALUE_COLUMN);
    let mut seen_data = false;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = split_fields(line);
        if !seen_data && fields.iter().any(|f| !f.is_empty() && f.parse::<f64>().is_err()) {
            cols = header_columns(&fields).ok_or_else(|| BenchError::MalformedRow {
                path: path.to_path_buf(),
                line: lineno,
                message: "header lacks decimal-date and average columns".into(),
            })?;
            continue;
        }
        seen_data = true;
        let field = |c: usize| -> Result<f64> {
            let f = fields.get(c).ok_or_else(|| BenchError::MalformedRow {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("missing column {}", c + 1),
            })?;
            f.parse().map_err(|_| BenchError::MalformedRow {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("`{f}` is not a number"),
            })
        };
        let (t, y) = (field(cols.0)?, field(cols.1)?);
        if y <= SENTINEL || !y.is_finite() {
            continue;
        }
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(BenchError::NonIncreasingTimes {
                    path: path.to_path_buf(),
                    line: lineno,
                });
            }
        }
        times.push(t);
        values.push(y);
        last_line = lineno;
    }
    if times.is_empty() {
        return Err(BenchError::NoValidRows(path.to_path_buf()));
    }
    let data = Dataset::new(times, values).map_err(|e| match e {
        spingp::Error::NonFinite(_) | spingp::Error::NonIncreasingTimes(_) | spingp::Error::DuplicateTimestamp(_) => {
            BenchError::NonIncreasingTimes {
                path: path.to_path_buf(),
                line: last_line,
            }
        }
        other => other.into(),
    })?;
    Ok(data.centered())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Co2Config {
    pub input: PathBuf,
    /// Kernel expression; `None` uses [`DEFAULT_CO2_KERNEL`] with starting
    /// values scaled to the data.
    pub kernel: Option<String>,
    pub budget: usize,
    pub holdout_years: f64,
    pub future_weeks: usize,
    pub out: Option<PathBuf>,
}

impl Co2Config {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            kernel: None,
            budget: 200,
            holdout_years: 8.0,
            future_weeks: 8 * 52,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub kernel: Option<String>,
    pub theta: Vec<f64>,
    pub noise_variance: Option<f64>,
    pub mll: Option<f64>,
    pub iterations: Option<usize>,
    pub termination: Option<String>,
    pub converged: bool,
    pub holdout_rmse: Option<f64>,
    pub error: Option<String>,
}

impl FitSummary {
    fn failed(e: &BenchError) -> Self {
        Self {
            kernel: None,
            theta: Vec::new(),
            noise_variance: None,
            mll: None,
            iterations: None,
            termination: None,
            converged: false,
            holdout_rmse: None,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Co2Metrics {
    pub input: PathBuf,
    pub initial_kernel: String,
    pub initial_noise_variance: f64,
    pub n_total: usize,
    pub n_train: usize,
    pub n_holdout: usize,
    pub n_future: usize,
    pub holdout_start: f64,
    pub train_mean_ppm: f64,
    pub baseline_rmse: f64,
    pub spingp: FitSummary,
    pub kf: FitSummary,
    /// Largest |spingp − kf| forecast mean over the held-out points, both at
    /// the spingp hyperparameters.
    pub max_abs_mean_diff_same_theta: Option<f64>,
}

impl Co2Metrics {
    pub fn has_errors(&self) -> bool {
        self.spingp.error.is_some() || self.kf.error.is_some() || self.max_abs_mean_diff_same_theta.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastRow {
    pub time: f64,
    pub segment: &'static str,
    pub observed: Option<f64>,
    pub spingp_mean: Option<f64>,
    pub spingp_variance: Option<f64>,
    pub kf_mean: Option<f64>,
    pub kf_variance: Option<f64>,
    pub kf_mean_at_spingp_theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Co2Outcome {
    pub metrics: Co2Metrics,
    pub forecast: Vec<ForecastRow>,
}

fn rmse(pred: &[f64], obs: &[f64]) -> f64 {
    let ss: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o).powi(2)).sum();
    (ss / obs.len() as f64).sqrt()
}

/// Starting expression: the user's, or the default with variances and
/// lengthscales scaled to the training data.
fn initial_kernel(kernel: Option<&str>, train: &Dataset) -> Result<(KernelExpr, f64)> {
    let v = train.values();
    let var = v.iter().map(|y| y * y).sum::<f64>() / v.len() as f64;
    let var = if var > 0.0 { var } else { 1.0 };
    let noise = 1e-3 * var;
    if let Some(k) = kernel {
        return Ok((KernelExpr::parse(k)?, noise));
    }
    let span = train.times()[train.len() - 1] - train.times()[0];
    let mut expr = KernelExpr::parse(DEFAULT_CO2_KERNEL)?;
    expr.terms[0].var = 0.05 * var;
    expr.terms[0].len = 0.5;
    expr.terms[1].var = var;
    expr.terms[1].len = (0.5 * span).max(1.0);
    Ok((expr, noise))
}

fn summarize(fit: &FitResult, expr: &KernelExpr, rmse: f64) -> FitSummary {
    FitSummary {
        kernel: Some(expr.with_theta(&fit.theta).to_string()),
        theta: fit.theta.values().to_vec(),
        noise_variance: Some(fit.noise.variance()),
        mll: Some(fit.mll),
        iterations: Some(fit.iterations),
        termination: Some(format!("{:?}", fit.termination)),
        converged: fit.converged(),
        holdout_rmse: Some(rmse),
        error: None,
    }
}

/// Holds out the final `holdout_years`, fits on the rest with both the
/// engine and the Kalman filter, and forecasts over the held-out span plus
/// `future_weeks` weekly points past the end of the record. Writes
/// `forecast.csv` and `metrics.json` when `cfg.out` is set, even if one of
/// the fits failed.
pub fn run_co2_forecast(cfg: &Co2Config) -> Result<Co2Outcome> {
    let all = ingest_co2_csv(&cfg.input)?;
    let t = all.times();
    let t_end = t[t.len() - 1];
    let cut = t_end - cfg.holdout_years;
    let (train_rows, hold_rows) = all.split_at_time(cut);
    if train_rows.is_empty() || hold_rows.is_empty() {
        return Err(BenchError::Config(format!(
            "{}: record too short for a {}-year hold-out",
            cfg.input.display(),
            cfg.holdout_years
        )));
    }
    // re-centre on the training mean so nothing from the hold-out leaks in
    let train = all.subset(&train_rows)?.centered();
    let hold_times: Vec<f64> = hold_rows.iter().map(|&i| t[i]).collect();
    let raw = all.raw_values();
    let hold_obs: Vec<f64> = hold_rows.iter().map(|&i| raw[i]).collect();
    let future: Vec<f64> = (1..=cfg.future_weeks).map(|k| t_end + k as f64 * WEEK_IN_YEARS).collect();
    let grid: Vec<f64> = hold_times.iter().chain(&future).copied().collect();
    let nh = hold_times.len();

    let (expr, noise_var0) = initial_kernel(cfg.kernel.as_deref(), &train)?;
    let spec = expr.spec();
    let theta0 = expr.theta();
    let noise0 = NoiseModel::new(noise_var0)?;
    let shift = train.normalization().shift;
    let baseline_rmse = rmse(&vec![shift; nh], &hold_obs);

    let mut forecast: Vec<ForecastRow> = grid
        .iter()
        .enumerate()
        .map(|(k, &time)| ForecastRow {
            time,
            segment: if k < nh { "holdout" } else { "future" },
            observed: hold_obs.get(k).copied(),
            spingp_mean: None,
            spingp_variance: None,
            kf_mean: None,
            kf_variance: None,
            kf_mean_at_spingp_theta: None,
        })
        .collect();

    let spingp = (|| -> Result<(FitResult, Vec<f64>)> {
        let fit = fit(Method::Spingp, &train, &spec, &theta0, &noise0, cfg.budget)?;
        let p = predict_with(Method::Spingp, &train, &spec, &fit.theta, &fit.noise, &grid, false)?;
        for (row, (m, v)) in forecast.iter_mut().zip(p.mean.iter().zip(&p.variance)) {
            row.spingp_mean = Some(train.denormalize_mean(*m));
            row.spingp_variance = Some(train.denormalize_variance(*v));
        }
        Ok((fit, p.mean))
    })();

    let kf = (|| -> Result<FitResult> {
        let fit = fit(Method::Kf, &train, &spec, &theta0, &noise0, cfg.budget)?;
        let p = predict_with(Method::Kf, &train, &spec, &fit.theta, &fit.noise, &grid, false)?;
        for (row, (m, v)) in forecast.iter_mut().zip(p.mean.iter().zip(&p.variance)) {
            row.kf_mean = Some(train.denormalize_mean(*m));
            row.kf_variance = Some(train.denormalize_variance(*v));
        }
        Ok(fit)
    })();

    let mut max_diff = None;
    let spingp_summary = match &spingp {
        Ok((fit, mean)) => {
            let m: Vec<f64> = mean[..nh].iter().map(|m| train.denormalize_mean(*m)).collect();
            let same = predict_with(Method::Kf, &train, &spec, &fit.theta, &fit.noise, &grid, false);
            if let Ok(Prediction { mean: kf_mean, .. }) = same {
                for (row, km) in forecast.iter_mut().zip(&kf_mean) {
                    row.kf_mean_at_spingp_theta = Some(train.denormalize_mean(*km));
                }
                max_diff = Some(
                    mean[..nh]
                        .iter()
                        .zip(&kf_mean[..nh])
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max),
                );
            }
            summarize(fit, &expr, rmse(&m, &hold_obs))
        }
        Err(e) => FitSummary::failed(e),
    };
    let kf_summary = match &kf {
        Ok(fit) => {
            let m: Vec<f64> = forecast[..nh].iter().map(|r| r.kf_mean.unwrap_or(f64::NAN)).collect();
            summarize(fit, &expr, rmse(&m, &hold_obs))
        }
        Err(e) => FitSummary::failed(e),
    };

    let metrics = Co2Metrics {
        input: cfg.input.clone(),
        initial_kernel: expr.to_string(),
        initial_noise_variance: noise_var0,
        n_total: all.len(),
        n_train: train.len(),
        n_holdout: nh,
        n_future: future.len(),
        holdout_start: cut,
        train_mean_ppm: shift,
        baseline_rmse,
        spingp: spingp_summary,
        kf: kf_summary,
        max_abs_mean_diff_same_theta: max_diff,
    };
    if let Some(dir) = &cfg.out {
        write_csv(&dir.join("forecast.csv"), &forecast)?;
        write_json(&dir.join("metrics.json"), &metrics)?;
    }
    Ok(Co2Outcome { metrics, forecast })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn whitespace_file_with_sentinel() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "w.txt",
            "# comment\n 1974  5 19  1974.3795   333.37\n 1974  5 26  1974.3986  -999.99\n 1974  6  2  1974.4178   332.95\n",
        );
        let d = ingest_co2_csv(&p).unwrap();
        assert_eq!(d.len(), 2);
        assert!((d.values()[0] + d.values()[1]).abs() < 1e-12);
        assert!((d.normalization().shift - 333.16).abs() < 1e-9);
    }

    #[test]
    fn header_selects_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "h.csv", "average,decimal\n400.5,2015.1\n401.0,2015.2\n");
        let d = ingest_co2_csv(&p).unwrap();
        assert_eq!(d.times(), &[2015.1, 2015.2]);
        assert_eq!(d.raw_values(), vec![400.5, 401.0]);
    }

    #[test]
    fn bad_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.csv", "# a\n# b\n\n");
        assert!(matches!(ingest_co2_csv(&p), Err(BenchError::NoValidRows(_))));
        let p = write(&dir, "s.csv", "1,1,1,2000.0,-999.99\n");
        assert!(matches!(ingest_co2_csv(&p), Err(BenchError::NoValidRows(_))));
        let p = write(&dir, "d.csv", "1,1,1,2000.5,370\n1,1,1,2000.5,371\n");
        assert!(matches!(ingest_co2_csv(&p), Err(BenchError::NonIncreasingTimes { line: 2, .. })));
        let p = write(&dir, "m.csv", "1,1,1,2000.5,abc\n");
        assert!(matches!(ingest_co2_csv(&p), Err(BenchError::MalformedRow { line: 1, .. })));
        assert!(matches!(
            ingest_co2_csv(&dir.path().join("absent.csv")),
            Err(BenchError::Io { .. })
        ));
    }
}
