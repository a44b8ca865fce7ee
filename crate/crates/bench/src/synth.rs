//! Synthetic benchmark series: two sinusoids in Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use spingp::engine::Dataset;

use crate::error::Result;

/// `y(t) = a1·sin(2π·f1·t) + a2·sin(2π·f2·t) + η`, `η ~ N(0, noise_sd²)`,
/// sampled at `t_i = i·spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidConfig {
    pub f1: f64,
    pub f2: f64,
    pub a1: f64,
    pub a2: f64,
    pub noise_sd: f64,
    pub spacing: f64,
}

impl Default for SinusoidConfig {
    fn default() -> Self {
        Self {
            f1: 0.04,
            f2: 0.17,
            a1: 1.0,
            a2: 0.6,
            noise_sd: 0.2,
            spacing: 1.0,
        }
    }
}

impl SinusoidConfig {
    pub fn signal(&self, t: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        self.a1 * (tau * self.f1 * t).sin() + self.a2 * (tau * self.f2 * t).sin()
    }
}

/// Deterministic in `(n, seed, cfg)`.
pub fn generate_sinusoid_data(n: usize, seed: u64, cfg: &SinusoidConfig) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times: Vec<f64> = (0..n).map(|i| i as f64 * cfg.spacing).collect();
    let values = if cfg.noise_sd > 0.0 {
        let eta = Normal::new(0.0, cfg.noise_sd).expect("finite noise level");
        times.iter().map(|&t| cfg.signal(t) + eta.sample(&mut rng)).collect()
    } else {
        times.iter().map(|&t| cfg.signal(t)).collect()
    };
    Ok(Dataset::new(times, values)?)
}
