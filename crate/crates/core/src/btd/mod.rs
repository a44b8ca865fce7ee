//! Symmetric block-tridiagonal (BTD) linear algebra.
//!
//! A [`SymBtd`] stores the `n` diagonal blocks and the `n - 1` blocks above
//! the diagonal; the blocks below the diagonal are the transposes of the
//! upper ones. [`factorize`] computes a block LDLᵀ factorization with
//! Cholesky pivots,
//!
//! ```text
//!     M = L̃ · diag(S₀, …, S_{n-1}) · L̃ᵀ,   L̃ = unit lower block bidiagonal,
//!     S₀ = D₀,  S_i = D_i − U_{i−1}ᵀ S_{i−1}⁻¹ U_{i−1},  L̃_{i+1,i} = U_iᵀ S_i⁻¹,
//! ```
//!
//! which serves solves, the log-determinant and the selective inverse.
//! [`cr_solve`] is an independent parallel route based on block cyclic
//! reduction.

mod cyclic;
mod dump;

pub use cyclic::{cr_solve, cr_solve_in, CrSolution};
pub use dump::{read_dump, write_dump};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, chol_logdet, symmetrize, trace_of_product};

#[derive(Debug, Clone, PartialEq)]
pub struct SymBtd {
    block_dim: usize,
    diag: Vec<DMatrix<f64>>,
    upper: Vec<DMatrix<f64>>,
}

impl SymBtd {
    /// Builds a BTD matrix from its diagonal blocks and its `(i, i+1)` blocks.
    pub fn new(diag: Vec<DMatrix<f64>>, upper: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = diag.len();
        if n == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if upper.len() != n - 1 {
            return Err(Error::DimensionMismatch {
                expected: n - 1,
                got: upper.len(),
            });
        }
        let b = diag[0].nrows();
        for m in diag.iter().chain(upper.iter()) {
            if m.nrows() != b || m.ncols() != b {
                return Err(Error::DimensionMismatch {
                    expected: b,
                    got: if m.nrows() != b { m.nrows() } else { m.ncols() },
                });
            }
        }
        Ok(Self {
            block_dim: b,
            diag,
            upper,
        })
    }

    pub fn zeros(n_blocks: usize, block_dim: usize) -> Self {
        assert!(n_blocks > 0 && block_dim > 0);
        Self {
            block_dim,
            diag: vec![DMatrix::zeros(block_dim, block_dim); n_blocks],
            upper: vec![DMatrix::zeros(block_dim, block_dim); n_blocks - 1],
        }
    }

    pub fn identity(n_blocks: usize, block_dim: usize) -> Self {
        let mut m = Self::zeros(n_blocks, block_dim);
        for d in &mut m.diag {
            d.fill_with_identity();
        }
        m
    }

    pub fn n_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    /// Total dimension `n·b`.
    pub fn dim(&self) -> usize {
        self.diag.len() * self.block_dim
    }

    pub fn diag(&self) -> &[DMatrix<f64>] {
        &self.diag
    }

    pub fn upper(&self) -> &[DMatrix<f64>] {
        &self.upper
    }

    pub fn diag_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.diag
    }

    pub fn upper_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.upper
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let b = self.block_dim;
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for (i, d) in self.diag.iter().enumerate() {
            out.view_mut((i * b, i * b), (b, b)).copy_from(d);
        }
        for (i, u) in self.upper.iter().enumerate() {
            out.view_mut((i * b, (i + 1) * b), (b, b)).copy_from(u);
            out.view_mut(((i + 1) * b, i * b), (b, b)).copy_from(&u.transpose());
        }
        out
    }

    fn check_same_shape(&self, other: &SymBtd) -> Result<()> {
        if self.n_blocks() != other.n_blocks() {
            return Err(Error::DimensionMismatch {
                expected: self.n_blocks(),
                got: other.n_blocks(),
            });
        }
        if self.block_dim != other.block_dim {
            return Err(Error::DimensionMismatch {
                expected: self.block_dim,
                got: other.block_dim,
            });
        }
        Ok(())
    }

    /// Block-tridiagonal product with a matrix of `n·b` rows.
    pub fn mul_mat(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if v.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.nrows(),
            });
        }
        let b = self.block_dim;
        let k = v.ncols();
        let n = self.n_blocks();
        let mut out = DMatrix::zeros(self.dim(), k);
        for i in 0..n {
            let mut acc = &self.diag[i] * v.rows(i * b, b);
            if i + 1 < n {
                acc += &self.upper[i] * v.rows((i + 1) * b, b);
            }
            if i > 0 {
                acc += self.upper[i - 1].tr_mul(&v.rows((i - 1) * b, b));
            }
            out.rows_mut(i * b, b).copy_from(&acc);
        }
        Ok(out)
    }
}

/// `m · v` for a BTD matrix and a vector of length `n·b`.
pub fn matvec(m: &SymBtd, v: &DVector<f64>) -> Result<DVector<f64>> {
    let out = m.mul_mat(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()))?;
    Ok(DVector::from_column_slice(out.as_slice()))
}

/// Block LDLᵀ factorization of a symmetric positive-definite BTD matrix.
#[derive(Debug, Clone)]
pub struct BtdFactor {
    pivots: Vec<Cholesky<f64, Dyn>>,
    multipliers: Vec<DMatrix<f64>>,
    logdet: f64,
}

impl BtdFactor {
    pub fn n_blocks(&self) -> usize {
        self.pivots.len()
    }

    pub fn block_dim(&self) -> usize {
        self.pivots[0].l_dirty().nrows()
    }

    /// Lower Cholesky factor of pivot `i`.
    pub fn pivot_factor(&self, i: usize) -> DMatrix<f64> {
        self.pivots[i].l()
    }

    /// Multiplier `U_iᵀ·S_i⁻¹`, the `(i+1, i)` block of the unit factor.
    pub fn multiplier(&self, i: usize) -> &DMatrix<f64> {
        &self.multipliers[i]
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Rebuilds the factored matrix (for diagnostics and tests).
    pub fn reconstruct(&self) -> SymBtd {
        let n = self.n_blocks();
        let pivots: Vec<DMatrix<f64>> = self
            .pivots
            .iter()
            .map(|c| {
                let l = c.l();
                &l * l.transpose()
            })
            .collect();
        let mut diag = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n {
            let mut d = pivots[i].clone();
            if i > 0 {
                let m = &self.multipliers[i - 1];
                d += m * &pivots[i - 1] * m.transpose();
            }
            diag.push(d);
            if i + 1 < n {
                upper.push((&self.multipliers[i] * &pivots[i]).transpose());
            }
        }
        SymBtd::new(diag, upper).expect("factor shapes are consistent")
    }
}

/// Sequential block Thomas factorization.
pub fn factorize(m: &SymBtd) -> Result<BtdFactor> {
    let n = m.n_blocks();
    let mut pivots = Vec::with_capacity(n);
    let mut multipliers = Vec::with_capacity(n - 1);
    let mut logdet = 0.0;
    let mut schur = m.diag[0].clone();
    for i in 0..n {
        symmetrize(&mut schur);
        let chol = cholesky(schur).ok_or(Error::NotPositiveDefinite(i))?;
        logdet += chol_logdet(&chol);
        if i + 1 < n {
            let u = &m.upper[i];
            // S_i⁻¹·U_i, then M_i = (S_i⁻¹·U_i)ᵀ
            let x = chol.solve(u);
            let mult = x.transpose();
            schur = &m.diag[i + 1] - &mult * u;
            multipliers.push(mult);
        } else {
            schur = DMatrix::zeros(0, 0);
        }
        pivots.push(chol);
    }
    Ok(BtdFactor {
        pivots,
        multipliers,
        logdet,
    })
}

/// Factor of `M = Rᵀ·R` from a block upper-bidiagonal square root `R`
/// (`diag` holds the upper-triangular `R_ii`, `upper` the `R_{i,i+1}`).
///
/// A root obtained by orthogonal reduction of a tall system carries the
/// conditioning of that system rather than its square, so this is the
/// accurate route when `M` itself would be formed from large, nearly
/// cancelling blocks. The result is interchangeable with [`factorize`].
pub fn factor_from_root(diag: Vec<DMatrix<f64>>, upper: Vec<DMatrix<f64>>) -> Result<BtdFactor> {
    let n = diag.len();
    if n == 0 || upper.len() + 1 != n {
        return Err(Error::DimensionMismatch {
            expected: n.saturating_sub(1),
            got: upper.len(),
        });
    }
    let b = diag[0].nrows();
    let mut pivots = Vec::with_capacity(n);
    let mut multipliers = Vec::with_capacity(n - 1);
    let mut logdet = 0.0;
    for (i, mut r) in diag.into_iter().enumerate() {
        if r.shape() != (b, b) {
            return Err(Error::DimensionMismatch {
                expected: b,
                got: r.nrows(),
            });
        }
        let mut up = upper.get(i).cloned();
        for k in 0..b {
            if r[(k, k)] < 0.0 {
                r.row_mut(k).neg_mut();
                if let Some(u) = up.as_mut() {
                    u.row_mut(k).neg_mut();
                }
            }
            if !(r[(k, k)] > 0.0 && r[(k, k)].is_finite()) {
                return Err(Error::NotPositiveDefinite(i));
            }
            logdet += 2.0 * r[(k, k)].ln();
        }
        let r = r.upper_triangle();
        if let Some(u) = up {
            // M_i = (R_ii⁻¹·R_{i,i+1})ᵀ
            let x = r.solve_upper_triangular(&u).ok_or(Error::NotPositiveDefinite(i))?;
            multipliers.push(x.transpose());
        }
        pivots.push(Cholesky::pack_dirty(r.transpose()));
    }
    Ok(BtdFactor {
        pivots,
        multipliers,
        logdet,
    })
}

/// Solves `M·X = rhs` with a factor of `M`; `rhs` has `n·b` rows.
pub fn solve(f: &BtdFactor, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.n_blocks();
    let b = f.block_dim();
    if rhs.nrows() != n * b {
        return Err(Error::DimensionMismatch {
            expected: n * b,
            got: rhs.nrows(),
        });
    }
    let mut x = rhs.clone();
    for i in 1..n {
        let (prev, mut cur) = x.rows_range_pair_mut((i - 1) * b..i * b, i * b..(i + 1) * b);
        cur.gemm(-1.0, &f.multipliers[i - 1], &prev, 1.0);
    }
    for i in 0..n {
        f.pivots[i].solve_mut(&mut x.rows_mut(i * b, b));
    }
    for i in (0..n.saturating_sub(1)).rev() {
        let (mut cur, next) = x.rows_range_pair_mut(i * b..(i + 1) * b, (i + 1) * b..(i + 2) * b);
        cur.gemm_tr(-1.0, &f.multipliers[i], &next, 1.0);
    }
    Ok(x)
}

pub fn logdet(f: &BtdFactor) -> f64 {
    f.logdet
}

/// Blocks of `M⁻¹` on the BTD pattern of `M`.
///
/// Backward recursion over the factor:
/// `C_{n−1} = S_{n−1}⁻¹`, `C_{i,i+1} = −M_iᵀ·C_{i+1,i+1}`,
/// `C_{i,i} = S_i⁻¹ − C_{i,i+1}·M_i`.
pub fn selective_inverse(f: &BtdFactor) -> SymBtd {
    let n = f.n_blocks();
    let b = f.block_dim();
    // built back to front, reversed at the end
    let mut diag = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n - 1);
    let mut last = f.pivots[n - 1].inverse();
    symmetrize(&mut last);
    diag.push(last);
    for i in (0..n - 1).rev() {
        let m = &f.multipliers[i];
        let mut c_up = DMatrix::zeros(b, b);
        c_up.gemm_tr(-1.0, m, &diag[diag.len() - 1], 0.0);
        let mut c_ii = f.pivots[i].inverse();
        c_ii.gemm(-1.0, &c_up, m, 1.0);
        symmetrize(&mut c_ii);
        diag.push(c_ii);
        upper.push(c_up);
    }
    diag.reverse();
    upper.reverse();
    SymBtd {
        block_dim: b,
        diag,
        upper,
    }
}

/// `Tr(S·M)` for two symmetric BTD matrices, touching only their blocks.
pub fn trace_btd_product(s: &SymBtd, m: &SymBtd) -> Result<f64> {
    s.check_same_shape(m)?;
    let mut acc = 0.0;
    for (a, b) in s.diag.iter().zip(&m.diag) {
        acc += trace_of_product(a, b);
    }
    for (a, b) in s.upper.iter().zip(&m.upper) {
        acc += 2.0 * a.dot(b);
    }
    Ok(acc)
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random SPD BTD: random blocks plus a diagonal shift that makes the
    /// matrix strictly block diagonally dominant.
    pub fn random_spd(n: usize, b: usize, seed: u64) -> SymBtd {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let upper: Vec<DMatrix<f64>> = (0..n.saturating_sub(1))
            .map(|_| DMatrix::from_fn(b, b, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let diag: Vec<DMatrix<f64>> = (0..n)
            .map(|_| {
                let a = DMatrix::from_fn(b, b, |_, _| rng.random_range(-1.0..1.0));
                &a * a.transpose() + DMatrix::identity(b, b) * (2.0 * b as f64 + 0.5)
            })
            .collect();
        SymBtd::new(diag, upper).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::random_spd;
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_btd(diag: &[f64], upper: &[f64]) -> SymBtd {
        SymBtd::new(
            diag.iter().map(|d| DMatrix::from_element(1, 1, *d)).collect(),
            upper.iter().map(|u| DMatrix::from_element(1, 1, *u)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn scalar_factor() {
        let f = factorize(&scalar_btd(&[4.0], &[])).unwrap();
        assert_relative_eq!(f.pivot_factor(0)[(0, 0)], 2.0);
        assert_relative_eq!(logdet(&f), 4f64.ln());
    }

    #[test]
    fn two_by_two_pivots_and_logdet() {
        let f = factorize(&scalar_btd(&[2.0, 2.0], &[-1.0])).unwrap();
        assert_relative_eq!(f.pivot_factor(0)[(0, 0)].powi(2), 2.0, max_relative = 1e-15);
        assert_relative_eq!(f.pivot_factor(1)[(0, 0)].powi(2), 1.5, max_relative = 1e-15);
        assert_relative_eq!(logdet(&f), 3f64.ln(), max_relative = 1e-15);
    }

    #[test]
    fn two_by_two_solve_and_inverse() {
        let m = scalar_btd(&[2.0, 2.0], &[-1.0]);
        let f = factorize(&m).unwrap();
        let x = solve(&f, &DMatrix::from_element(2, 1, 1.0)).unwrap();
        assert_relative_eq!(x[0], 1.0, max_relative = 1e-15);
        assert_relative_eq!(x[1], 1.0, max_relative = 1e-15);
        let c = selective_inverse(&f);
        assert_relative_eq!(c.diag()[0][(0, 0)], 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(c.diag()[1][(0, 0)], 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(c.upper()[0][(0, 0)], 1.0 / 3.0, max_relative = 1e-15);
        let y = matvec(&m, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn identity_cases() {
        let id = SymBtd::identity(4, 3);
        let f = factorize(&id).unwrap();
        assert_eq!(logdet(&f), 0.0);
        let rhs = DMatrix::from_fn(12, 2, |i, j| (i * 3 + j) as f64 - 4.0);
        assert_eq!(solve(&f, &rhs).unwrap(), rhs);
        let v = DVector::from_fn(12, |i, _| i as f64);
        assert_eq!(matvec(&id, &v).unwrap(), v);
        assert_eq!(selective_inverse(&f), id);
        let id7 = SymBtd::identity(7, 1);
        assert_eq!(trace_btd_product(&id7, &id7).unwrap(), 7.0);
        assert_eq!(trace_btd_product(&id7, &SymBtd::zeros(7, 1)).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_logdet() {
        let mut m = SymBtd::identity(5, 1);
        for d in m.diag_mut() {
            d[(0, 0)] = 2.0;
        }
        assert_relative_eq!(logdet(&factorize(&m).unwrap()), 5.0 * 2f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn indefinite_is_rejected() {
        let m = scalar_btd(&[-1.0], &[]);
        assert_eq!(factorize(&m).unwrap_err(), Error::NotPositiveDefinite(0));
        let m = scalar_btd(&[1.0, 1.0], &[2.0]);
        assert_eq!(factorize(&m).unwrap_err(), Error::NotPositiveDefinite(1));
    }

    #[test]
    fn reconstruction_recovers_matrix() {
        let m = random_spd(6, 3, 11);
        let r = factorize(&m).unwrap().reconstruct();
        let diff = (m.to_dense() - r.to_dense()).amax();
        assert!(diff <= 1e-8 * m.to_dense().amax(), "{diff}");
        for i in 0..6 {
            let l = factorize(&m).unwrap().pivot_factor(i);
            assert!(l.diagonal().iter().all(|d| *d > 0.0));
        }
    }

    #[test]
    fn random_logdet_matches_dense() {
        let m = random_spd(10, 3, 5);
        let dense = m.to_dense().cholesky().unwrap();
        let want = 2.0 * dense.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        assert_relative_eq!(logdet(&factorize(&m).unwrap()), want, max_relative = 1e-9);
    }

    #[test]
    fn random_solve_matches_dense() {
        let m = random_spd(50, 4, 9);
        let rhs = DMatrix::from_fn(200, 3, |i, j| ((i * 7 + j * 13) % 11) as f64 - 5.0);
        let x = solve(&factorize(&m).unwrap(), &rhs).unwrap();
        let want = m.to_dense().lu().solve(&rhs).unwrap();
        assert!((&x - &want).norm() <= 1e-8 * want.norm());
    }

    #[test]
    fn dimension_mismatch() {
        let m = random_spd(3, 2, 1);
        let f = factorize(&m).unwrap();
        assert!(matches!(solve(&f, &DMatrix::zeros(5, 1)), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(matvec(&m, &DVector::zeros(7)), Err(Error::DimensionMismatch { .. })));
        assert!(trace_btd_product(&m, &SymBtd::zeros(2, 2)).is_err());
        assert!(SymBtd::new(vec![DMatrix::zeros(2, 2)], vec![DMatrix::zeros(2, 2)]).is_err());
    }

    #[test]
    fn root_factor_matches_thomas() {
        // build M = Rᵀ·R from a random block-bidiagonal R with mixed-sign diagonals
        let (n, b) = (6, 3);
        let diag: Vec<DMatrix<f64>> = (0..n)
            .map(|i| {
                DMatrix::from_fn(b, b, |r, c| {
                    if r > c {
                        0.0
                    } else if r == c {
                        if (i + r) % 2 == 0 { 1.5 + r as f64 } else { -2.0 }
                    } else {
                        ((i + 3 * r + 5 * c) as f64).sin()
                    }
                })
            })
            .collect();
        let upper: Vec<DMatrix<f64>> = (0..n - 1)
            .map(|i| DMatrix::from_fn(b, b, |r, c| ((2 * i + r + 7 * c) as f64).cos()))
            .collect();
        let mut root = DMatrix::zeros(n * b, n * b);
        for i in 0..n {
            root.view_mut((i * b, i * b), (b, b)).copy_from(&diag[i]);
            if i + 1 < n {
                root.view_mut((i * b, (i + 1) * b), (b, b)).copy_from(&upper[i]);
            }
        }
        let dense = root.tr_mul(&root);
        let m = SymBtd::new(
            (0..n).map(|i| dense.view((i * b, i * b), (b, b)).into_owned()).collect(),
            (0..n - 1).map(|i| dense.view((i * b, (i + 1) * b), (b, b)).into_owned()).collect(),
        )
        .unwrap();
        let thomas = factorize(&m).unwrap();
        let rooted = factor_from_root(diag, upper).unwrap();
        assert_relative_eq!(rooted.logdet(), thomas.logdet(), max_relative = 1e-12);
        let rhs = DMatrix::from_fn(n * b, 1, |i, _| i as f64 - 4.0);
        let x = solve(&rooted, &rhs).unwrap();
        assert!((&x - solve(&thomas, &rhs).unwrap()).amax() < 1e-9 * x.amax());
        let ci = selective_inverse(&rooted);
        let ct = selective_inverse(&thomas);
        assert!((ci.to_dense() - ct.to_dense()).amax() < 1e-10);
    }

    #[test]
    fn root_factor_rejects_zero_pivot() {
        let err = factor_from_root(vec![DMatrix::zeros(2, 2)], vec![]).unwrap_err();
        assert_eq!(err, Error::NotPositiveDefinite(0));
    }
}
