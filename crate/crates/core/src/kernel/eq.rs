//! State-space approximation of the exponentiated-quadratic (EQ) kernel.
//!
//! The EQ spectral density `S(ω) = σ²·√(2π)·ℓ·exp(−ℓ²ω²/2)` is approximated
//! by replacing `exp(x)` in the denominator with its order-`J` Taylor
//! polynomial. The stable spectral factor of that polynomial gives a
//! companion-form SDE driven by white noise. We then
//!
//! * normalize the noise so that the implied `k(0)` equals `σ²` exactly,
//! * change basis to `x' = L⁻¹·x` with `P∞ = L·Lᵀ`, so the model has
//!   `P∞ = σ²·I` and `H = e₀`, and
//! * scale time, so `F = F̃/ℓ` with `F̃` computed once for `ℓ = 1`.
//!
//! The whitened basis keeps every state component at the same scale, which
//! matters once the process-noise blocks are inverted for long lengthscales.

use nalgebra::{DMatrix, RowDVector, SymmetricEigen};
use num_complex::Complex64;

use super::{leaf_ss, KernelSpec, StateSpaceModel};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, lyapunov, symmetrize};

pub(crate) const MAX_ORDER: usize = 16;

/// Roots of `Σ_{n≤J} v^n/n!` by Aberth–Ehrlich iteration.
fn truncated_exp_roots(order: usize) -> Result<Vec<Complex64>> {
    // monic form: Σ J!/n! v^n
    let mut coef = vec![1.0f64; order + 1];
    for n in (0..order).rev() {
        coef[n] = coef[n + 1] * (n + 1) as f64;
    }
    let eval = |z: Complex64| -> (Complex64, Complex64) {
        let mut p = Complex64::new(coef[order], 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for n in (0..order).rev() {
            dp = dp * z + p;
            p = p * z + coef[n];
        }
        (p, dp)
    };
    let radius = coef[0].powf(1.0 / order as f64);
    let mut z: Vec<Complex64> = (0..order)
        .map(|k| Complex64::from_polar(radius, 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / order as f64))
        .collect();
    let mut last_step = f64::INFINITY;
    for _ in 0..500 {
        let mut max_step = 0.0f64;
        for i in 0..order {
            let (p, dp) = eval(z[i]);
            let ratio = p / dp;
            let repulsion: Complex64 = (0..order)
                .filter(|&j| j != i)
                .map(|j| Complex64::new(1.0, 0.0) / (z[i] - z[j]))
                .sum();
            let step = ratio / (Complex64::new(1.0, 0.0) - ratio * repulsion);
            z[i] -= step;
            max_step = max_step.max(step.norm() / z[i].norm().max(1.0));
        }
        last_step = max_step;
        if max_step < 1e-14 {
            break;
        }
    }
    // the last few digits stall at rounding level for the higher orders
    if last_step > 1e-10 || z.iter().any(|r| !r.re.is_finite() || !r.im.is_finite()) {
        return Err(Error::RootFinding(order));
    }
    Ok(z)
}

/// Left-half-plane poles of the unit (`ℓ = 1`) spectral factor.
fn stable_poles(order: usize) -> Result<Vec<Complex64>> {
    let v = truncated_exp_roots(order)?;
    // exp(ω²/2) with ω² = −s² gives v = −s²/2, so s = ±√(−2v); keep Re s < 0
    let mut poles = Vec::with_capacity(order);
    for r in v {
        let mut s = (r * -2.0).sqrt();
        if s.re > 0.0 {
            s = -s;
        }
        if s.re > -1e-12 {
            return Err(Error::RootFinding(order));
        }
        poles.push(s);
    }
    Ok(poles)
}

/// Poles `p_j` and weights `w_j` with `Σ w_j = 1` such that the unit
/// covariance is `Re Σ w_j·exp(p_j·τ)` for `τ ≥ 0`: the residues of
/// `1/(a(s)·a(−s))` at the roots of `a`, normalized.
pub(crate) fn unit_residues(order: usize) -> Result<Vec<(Complex64, Complex64)>> {
    let poles = stable_poles(order)?;
    let raw: Vec<Complex64> = poles
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let mut den = Complex64::new(1.0, 0.0);
            for (k, &q) in poles.iter().enumerate() {
                if k != j {
                    den *= p - q;
                }
                den *= -p - q;
            }
            den.inv()
        })
        .collect();
    let total: Complex64 = raw.iter().sum();
    if !(total.re > 0.0) || total.im.abs() > 1e-9 * total.re {
        return Err(Error::RootFinding(order));
    }
    Ok(poles.into_iter().zip(raw.into_iter().map(|w| w / total.re)).collect())
}

/// Dimensionless (`σ² = 1`, `ℓ = 1`) whitened generator for order `J`.
fn unit_generator(order: usize) -> Result<DMatrix<f64>> {
    let poles = stable_poles(order)?;
    // monic q(s) = Π (s − s_k), coefficients low → high
    let mut q = vec![Complex64::new(1.0, 0.0)];
    for s in &poles {
        let mut next = vec![Complex64::new(0.0, 0.0); q.len() + 1];
        for (i, c) in q.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= c * s;
        }
        q = next;
    }
    let scale = q.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if q.iter().any(|c| c.im.abs() > 1e-9 * scale) {
        return Err(Error::RootFinding(order));
    }
    let a: Vec<f64> = q.iter().map(|c| c.re).collect();

    let mut f = DMatrix::<f64>::zeros(order, order);
    for i in 0..order - 1 {
        f[(i, i + 1)] = 1.0;
    }
    for j in 0..order {
        f[(order - 1, j)] = -a[j];
    }
    // noise spectral density √(2π)·J!·2^J; normalized away below
    let mut qc = (2.0 * std::f64::consts::PI).sqrt() * 2f64.powi(order as i32);
    for k in 1..=order {
        qc *= k as f64;
    }
    let mut c = DMatrix::<f64>::zeros(order, order);
    c[(order - 1, order - 1)] = qc;
    // component k is the k-th derivative; its EQ variance is (2k−1)!!
    let mut dfact = 1.0;
    let pre: Vec<f64> = (0..order)
        .map(|k| {
            if k > 0 {
                dfact *= (2 * k - 1) as f64;
            }
            1.0 / dfact.sqrt()
        })
        .collect();
    let mut p = lyapunov(&f, &c, Some(&pre)).ok_or(Error::RootFinding(order))?;
    let k0 = p[(0, 0)];
    p /= k0;
    symmetrize(&mut p);
    let chol = cholesky(p).ok_or(Error::RootFinding(order))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(order, order))
        .ok_or(Error::RootFinding(order))?;
    let mut g = &l_inv * &f * &l;
    // In this basis the Lyapunov equation reads G + Gᵀ = −g·gᵀ. Project the
    // symmetric part onto its closest rank-one negative form so that
    // I − Φ·Φᵀ stays positive semi-definite up to rounding.
    let skew = (&g - g.transpose()) * 0.5;
    let mut sym = (&g + g.transpose()) * 0.5;
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let (imin, lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
    if lmin >= 0.0 {
        return Err(Error::RootFinding(order));
    }
    let vec = eig.eigenvectors.column(imin);
    g = skew + (&vec * vec.transpose()) * lmin;
    Ok(g)
}

/// `(F, H, P∞)` of an EQ leaf in the whitened basis.
pub(crate) fn eq_leaf(
    sigma2: f64,
    ell: f64,
    order: usize,
) -> Result<(DMatrix<f64>, RowDVector<f64>, DMatrix<f64>)> {
    KernelSpec::EqApprox { order }.validate()?;
    let g = unit_generator(order)?;
    let mut h = RowDVector::zeros(order);
    h[0] = 1.0;
    Ok((g / ell, h, DMatrix::identity(order, order) * sigma2))
}

/// Order-`J` state-space approximation of `σ²·exp(−τ²/(2ℓ²))`.
pub fn eq_approx_ss(sigma2: f64, lengthscale: f64, order: usize) -> Result<StateSpaceModel> {
    for (name, v) in [("variance", sigma2), ("lengthscale", lengthscale)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::NonPositiveHyperparameter {
                name: format!("eq_0.{name}"),
                value: v,
            });
        }
    }
    leaf_ss(&KernelSpec::EqApprox { order }, 0, sigma2, lengthscale)
}
