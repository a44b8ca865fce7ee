use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use spingp::kernel::{
    discretize, discretize_with_grad, eq_approx_ss, eq_exact, kernel_eval, state_space_of, Hyperparameters, KernelSpec,
    StateSpaceModel,
};

fn all_kernels() -> Vec<(KernelSpec, Vec<f64>)> {
    vec![
        (KernelSpec::Matern12, vec![1.3, 2.0]),
        (KernelSpec::Matern32, vec![0.7, 1.5]),
        (KernelSpec::Matern52, vec![2.0, 0.8]),
        (KernelSpec::EqApprox { order: 6 }, vec![1.0, 2.5]),
        (KernelSpec::EqApprox { order: 10 }, vec![1.0, 1.0]),
        (
            KernelSpec::Sum(vec![KernelSpec::Matern32, KernelSpec::Matern12]),
            vec![0.8, 4.0, 0.3, 1.5],
        ),
    ]
}

fn ssm(spec: &KernelSpec, theta: &[f64]) -> StateSpaceModel {
    state_space_of(spec, &Hyperparameters::new(theta.to_vec())).unwrap()
}

fn matern_closed_form(spec: &KernelSpec, s2: f64, ell: f64, tau: f64) -> f64 {
    let r = tau.abs() / ell;
    match spec {
        KernelSpec::Matern12 => s2 * (-r).exp(),
        KernelSpec::Matern32 => {
            let a = 3f64.sqrt() * r;
            s2 * (1.0 + a) * (-a).exp()
        }
        KernelSpec::Matern52 => {
            let a = 5f64.sqrt() * r;
            s2 * (1.0 + a + a * a / 3.0) * (-a).exp()
        }
        _ => unreachable!(),
    }
}

fn taylor_expm(a: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=terms {
        term = &term * a / k as f64;
        sum += &term;
    }
    sum
}

#[test]
fn matern32_unit_lag_value() {
    let v = kernel_eval(&KernelSpec::Matern32, &Hyperparameters::new(vec![1.0, 1.0]), 0.0, 1.0).unwrap();
    assert!((v - 0.48335).abs() < 1e-5, "{v}");
    assert_eq!(
        kernel_eval(&KernelSpec::Matern32, &Hyperparameters::new(vec![2.5, 1.0]), 3.0, 3.0).unwrap(),
        2.5
    );
}

#[test]
fn transition_matches_taylor_reference() {
    let m = ssm(&KernelSpec::Matern32, &[1.0, 1.0]);
    let phi = discretize(&m, 0.5).phi;
    let reference = taylor_expm(&(&m.f * 0.5), 30);
    assert!((phi - reference).amax() <= 1e-10);
}

#[test]
fn implied_matern_covariance_matches_closed_form() {
    let mut state = 12345u64;
    let mut uniform = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for spec in [KernelSpec::Matern12, KernelSpec::Matern32, KernelSpec::Matern52] {
        let (s2, ell) = (1.7, 2.3);
        let m = ssm(&spec, &[s2, ell]);
        for _ in 0..100 {
            let tau = uniform() * 10.0 * ell;
            let want = matern_closed_form(&spec, s2, ell, tau);
            let got = m.covariance(tau);
            assert!((got - want).abs() <= 1e-8 * want.abs().max(1e-300), "{spec:?} τ={tau}: {got} vs {want}");
        }
    }
}

#[test]
fn sum_covariance_is_sum_of_children() {
    let children = [(KernelSpec::Matern52, [0.4, 1.1]), (KernelSpec::EqApprox { order: 8 }, [1.2, 3.0])];
    let sum = ssm(
        &KernelSpec::Sum(children.iter().map(|c| c.0.clone()).collect()),
        &[0.4, 1.1, 1.2, 3.0],
    );
    for k in 0..40 {
        let tau = k as f64 * 0.25;
        let parts: f64 = children.iter().map(|(s, th)| ssm(s, th).covariance(tau)).sum();
        assert!((sum.covariance(tau) - parts).abs() <= 1e-10);
    }
}

#[test]
fn eq_order_ten_shape_and_variance() {
    let m = eq_approx_ss(2.0, 1.5, 10).unwrap();
    assert_eq!(m.state_dim(), 10);
    assert!((m.covariance(0.0) - 2.0).abs() <= 1e-6 * 2.0);
}

#[test]
fn eq_approximation_error_shrinks_with_order() {
    let (s2, ell) = (1.0, 1.0);
    let mut last = f64::INFINITY;
    for order in [4, 6, 8, 10] {
        let m = eq_approx_ss(s2, ell, order).unwrap();
        let err = (0..=500)
            .map(|k| {
                let tau = k as f64 * 5.0 * ell / 500.0;
                (m.covariance(tau) - eq_exact(s2, ell, tau)).abs()
            })
            .fold(0.0, f64::max);
        assert!(err <= last, "order {order}: {err} > {last}");
        last = err;
    }
    assert!(last <= 0.02 * s2, "{last}");
}

#[test]
fn process_noise_is_psd_for_every_kernel() {
    for (spec, theta) in all_kernels() {
        let m = ssm(&spec, &theta);
        for dt in [1e-4, 0.01, 0.3, 1.0, 7.0, 50.0] {
            let q = discretize(&m, dt).q;
            let min = SymmetricEigen::new(q.clone()).eigenvalues.min();
            assert!(min >= -1e-10 * q.trace().abs(), "{spec:?} dt={dt}: {min}");
        }
    }
}

#[test]
fn step_gradients_match_finite_differences() {
    for (spec, theta) in all_kernels() {
        for j in 0..theta.len() {
            let dt = 0.4;
            let step = discretize_with_grad(&ssm(&spec, &theta), dt, j).unwrap();
            let h = 1e-6 * theta[j];
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[j] += h;
            dn[j] -= h;
            let (su, sd) = (discretize(&ssm(&spec, &up), dt), discretize(&ssm(&spec, &dn), dt));
            let fd_phi = (&su.phi - &sd.phi) / (2.0 * h);
            let fd_q = (&su.q - &sd.q) / (2.0 * h);
            let g = &step.grads[0];
            let ok = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).norm() <= 1e-4 * b.norm() || b.norm() < 1e-12;
            assert!(ok(&g.d_phi, &fd_phi), "{spec:?} param {j} dΦ");
            assert!(ok(&g.d_q, &fd_q), "{spec:?} param {j} dQ");
        }
    }
}

proptest! {
    #[test]
    fn transition_group_property(a in 0.0f64..5.0, b in 0.0f64..5.0, which in 0usize..6) {
        let (spec, theta) = all_kernels().swap_remove(which);
        let m = ssm(&spec, &theta);
        let sa = discretize(&m, a);
        let sb = discretize(&m, b);
        let sab = discretize(&m, a + b);
        prop_assert!((&sa.phi * &sb.phi - &sab.phi).amax() <= 1e-9);
        // process noise composes the same way
        let composed = &sb.phi * &sa.q * sb.phi.transpose() + &sb.q;
        prop_assert!((composed - &sab.q).amax() <= 1e-9 * m.p_inf.amax());
    }

    #[test]
    fn kernel_eval_symmetric(t in -50.0f64..50.0, s in -50.0f64..50.0, which in 0usize..6) {
        let (spec, theta) = all_kernels().swap_remove(which);
        let th = Hyperparameters::new(theta);
        prop_assert_eq!(kernel_eval(&spec, &th, t, s).unwrap(), kernel_eval(&spec, &th, s, t).unwrap());
    }
}
