//! Experiment configuration: defaults, a `key = value` file, and command-line
//! overrides applied on top.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{BenchError, Result};
use crate::kernel_expr::KernelExpr;
use crate::synth::SinusoidConfig;

/// Default kernel of the N sweep (state dimension 12).
pub const DEFAULT_SCALING_KERNEL: &str = "matern32(var=0.5, len=10) + eq(var=0.5, len=5, order=10)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(into = "String")]
pub enum Method {
    Spingp,
    Kf,
    Dense,
    /// Block cyclic reduction on the formed posterior precision, MLL only.
    SpingpCr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Spingp => "spingp",
            Method::Kf => "kf",
            Method::Dense => "dense",
            Method::SpingpCr => "spingp-cr",
        }
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_string()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spingp" => Ok(Method::Spingp),
            "kf" => Ok(Method::Kf),
            "dense" => Ok(Method::Dense),
            "spingp-cr" | "cr" => Ok(Method::SpingpCr),
            other => Err(BenchError::Config(format!(
                "unknown method `{other}` (expected spingp, kf, dense or spingp-cr)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kernel: String,
    pub methods: Vec<Method>,
    /// N values for the N sweep, block sizes for the b sweep.
    pub sweep: Vec<usize>,
    /// Series length for single runs and the b sweep.
    pub n: usize,
    pub seed: u64,
    pub repetitions: usize,
    /// Worker threads for cyclic reduction.
    pub threads: usize,
    pub out: PathBuf,
    pub parallel_cells: bool,
    /// Observation noise variance used by the sweeps; defaults to `noise_sd²`.
    pub noise_variance: Option<f64>,
    pub budget: usize,
    pub input: Option<PathBuf>,
    pub sinusoid: SinusoidConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kernel: DEFAULT_SCALING_KERNEL.to_string(),
            methods: vec![Method::Spingp],
            sweep: vec![1000, 2000, 4000, 8000],
            n: 1000,
            seed: 0,
            repetitions: 5,
            threads: 1,
            out: PathBuf::from("out"),
            parallel_cells: false,
            noise_variance: None,
            budget: 200,
            input: None,
            sinusoid: SinusoidConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| BenchError::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split([',', ' '])
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl ExperimentConfig {
    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
            .unwrap_or(self.sinusoid.noise_sd * self.sinusoid.noise_sd)
    }

    pub fn kernel_expr(&self) -> Result<KernelExpr> {
        KernelExpr::parse(&self.kernel)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "kernel" => self.kernel = v.to_string(),
            "method" | "methods" => {
                self.methods = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(Method::from_str)
                    .collect::<Result<_>>()?
            }
            "sweep" => self.sweep = parse_list(&key, v)?,
            "n" => self.n = parse(&key, v)?,
            "seed" => self.seed = parse(&key, v)?,
            "repetitions" => self.repetitions = parse(&key, v)?,
            "threads" => self.threads = parse(&key, v)?,
            "out" => self.out = PathBuf::from(v),
            "parallel_cells" => self.parallel_cells = parse(&key, v)?,
            "noise_variance" => self.noise_variance = Some(parse(&key, v)?),
            "budget" => self.budget = parse(&key, v)?,
            "input" => self.input = Some(PathBuf::from(v)),
            "f1" => self.sinusoid.f1 = parse(&key, v)?,
            "f2" => self.sinusoid.f2 = parse(&key, v)?,
            "a1" => self.sinusoid.a1 = parse(&key, v)?,
            "a2" => self.sinusoid.a2 = parse(&key, v)?,
            "noise_sd" => self.sinusoid.noise_sd = parse(&key, v)?,
            "spacing" => self.sinusoid.spacing = parse(&key, v)?,
            _ => return Err(BenchError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies every setting of a `key = value` file. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                BenchError::Config(format!("{}:{}: expected key = value", path.display(), lineno + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel_expr()?;
        if self.n == 0 || self.sweep.contains(&0) {
            return Err(BenchError::Config("sizes must be at least 1".into()));
        }
        if self.repetitions == 0 {
            return Err(BenchError::Config("repetitions must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(BenchError::Config("no method selected".into()));
        }
        if !(self.noise_variance() > 0.0) {
            return Err(BenchError::Config("noise variance must be positive".into()));
        }
        if !(self.sinusoid.spacing > 0.0) {
            return Err(BenchError::Config("spacing must be positive".into()));
        }
        Ok(())
    }
}
