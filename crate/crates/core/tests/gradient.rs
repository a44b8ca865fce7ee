mod common;

use common::irregular_data;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spingp::baselines::{dense_gp_mll_gradient, kf_mll_gradient};
use spingp::engine::{log_marginal_likelihood, mll_gradient, Dataset, NoiseModel};
use spingp::kernel::{state_space_of, Hyperparameters, KernelSpec};

/// Kernels whose likelihood is smooth to rounding at the finite-difference step.
fn matern_kinds() -> Vec<KernelSpec> {
    vec![
        KernelSpec::Matern12,
        KernelSpec::Matern32,
        KernelSpec::Matern52,
        KernelSpec::Sum(vec![KernelSpec::Matern32, KernelSpec::Matern12]),
    ]
}

fn random_config(seed: u64, kinds: &[KernelSpec]) -> (KernelSpec, Hyperparameters, NoiseModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = kinds[(seed % kinds.len() as u64) as usize].clone();
    let theta: Vec<f64> = (0..spec.n_params())
        .map(|i| if i % 2 == 0 { rng.random_range(0.3..2.0) } else { rng.random_range(0.7..6.0) })
        .collect();
    let noise = NoiseModel::new(rng.random_range(0.01..0.3)).unwrap();
    (spec, Hyperparameters::new(theta), noise)
}

/// Central differences in log-space with step `h`.
fn finite_difference(data: &Dataset, spec: &KernelSpec, theta: &Hyperparameters, noise: &NoiseModel, h: f64) -> Vec<f64> {
    let mut logs = theta.to_log();
    logs.push(noise.variance().ln());
    let eval = |l: &[f64]| {
        let th = Hyperparameters::from_log(&l[..l.len() - 1]);
        let nz = NoiseModel::new(l[l.len() - 1].exp()).unwrap();
        log_marginal_likelihood(data, spec, &th, &nz).unwrap()
    };
    (0..logs.len())
        .map(|i| {
            let mut up = logs.clone();
            let mut dn = logs.clone();
            up[i] += h;
            dn[i] -= h;
            (eval(&up) - eval(&dn)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (spec, theta, noise) = random_config(seed, &matern_kinds());
        let data = irregular_data(50, 100 + seed);
        let g = mll_gradient(&data, &spec, &theta, &noise).unwrap().log_space();
        let fd = finite_difference(&data, &spec, &theta, &noise, 1e-6);
        for (i, (a, b)) in g.iter().zip(&fd).enumerate() {
            let err = (a - b).abs() / b.abs();
            worst = worst.max(err);
            assert!(err <= 1e-4, "seed {seed} {spec:?} param {i}: analytic {a} vs fd {b}");
        }
    }
    eprintln!("worst relative error {worst:.2e}");
}

#[test]
fn gradient_agrees_with_both_oracles() {
    for seed in 0..5 {
        let (spec, theta, noise) = random_config(seed, &matern_kinds());
        let data = irregular_data(40, seed);
        let g = mll_gradient(&data, &spec, &theta, &noise).unwrap();
        let (_, gd) = dense_gp_mll_gradient(&data, &spec, &theta, &noise).unwrap();
        let ssm = state_space_of(&spec, &theta).unwrap();
        let (_, gk) = kf_mll_gradient(&data, &ssm, &noise).unwrap();
        assert_eq!(g.names, gd.names);
        for i in 0..g.natural.len() {
            let scale = gd.natural[i].abs().max(1e-3);
            assert!((g.natural[i] - gd.natural[i]).abs() <= 1e-6 * scale, "seed {seed} dense {i}");
            assert!((g.natural[i] - gk.natural[i]).abs() <= 1e-6 * scale, "seed {seed} kf {i}");
        }
    }
}

// The EQ state space has a near-singular process noise at short gaps, so its
// likelihood carries rounding noise of order 1e-10 that a 1e-6 step amplifies.
// Check it against the dense gradient instead. The precision blocks scale
// with the inverse jitter, which leaves about 1e-4 relative error here.
#[test]
fn eq_gradient_matches_dense() {
    let kinds = [KernelSpec::EqApprox { order: 6 }, KernelSpec::EqApprox { order: 10 }];
    for seed in 0..6 {
        let (spec, theta, noise) = random_config(seed, &kinds);
        let data = irregular_data(50, 100 + seed);
        let g = mll_gradient(&data, &spec, &theta, &noise).unwrap().log_space();
        let (_, gd) = dense_gp_mll_gradient(&data, &spec, &theta, &noise).unwrap();
        for (i, (a, b)) in g.iter().zip(gd.log_space()).enumerate() {
            assert!((a - b).abs() <= 1e-3 * b.abs().max(1.0), "seed {seed} {spec:?} param {i}: {a} vs {b}");
        }
    }
}
