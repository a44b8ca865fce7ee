#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spingp::engine::{Dataset, NoiseModel};
use spingp::kernel::{Hyperparameters, KernelSpec};

/// Irregularly spaced noisy sinusoid with unit mean spacing.
pub fn irregular_data(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    let mut times = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        t += 0.5 + rng.random::<f64>();
        times.push(t);
        y.push((0.25 * t).sin() + 0.5 * (0.9 * t).cos() + 0.2 * (rng.random::<f64>() - 0.5));
    }
    Dataset::new(times, y).unwrap()
}

pub fn kernels() -> Vec<(&'static str, KernelSpec, Hyperparameters)> {
    vec![
        ("matern12", KernelSpec::Matern12, Hyperparameters::new(vec![1.0, 3.0])),
        ("matern32", KernelSpec::Matern32, Hyperparameters::new(vec![1.0, 3.0])),
        ("matern52", KernelSpec::Matern52, Hyperparameters::new(vec![1.0, 3.0])),
        ("eq10", KernelSpec::EqApprox { order: 10 }, Hyperparameters::new(vec![1.0, 3.0])),
        (
            "matern32+matern12",
            KernelSpec::Sum(vec![KernelSpec::Matern32, KernelSpec::Matern12]),
            Hyperparameters::new(vec![0.8, 4.0, 0.3, 1.5]),
        ),
    ]
}

pub fn noise() -> NoiseModel {
    NoiseModel::new(0.04).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Exact draw from a Matern-1/2 (Ornstein–Uhlenbeck) process plus white noise
/// at irregular times with unit mean spacing.
pub fn ou_sample(n: usize, sigma2: f64, ell: f64, noise_var: f64, seed: u64) -> Dataset {
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    let mut x: f64 = sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal);
    let mut times = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            let dt = 0.5 + rng.random::<f64>();
            t += dt;
            let a = (-dt / ell).exp();
            x = a * x + (sigma2 * (1.0 - a * a)).sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        times.push(t);
        y.push(x + noise_var.sqrt() * rng.sample::<f64, _>(StandardNormal));
    }
    Dataset::new(times, y).unwrap()
}
