//! Block cyclic reduction.
//!
//! Each level eliminates the even-indexed blocks `0, 2, 4, …`. Those blocks
//! are mutually uncoupled, so their pivots factor independently and every
//! surviving (odd) row updates independently; both steps run on the rayon
//! pool. A level with `n` blocks leaves `⌊n/2⌋` blocks; missing neighbours at
//! the ends act as zero couplings, so no padding is needed for
//! non-power-of-two sizes.
//!
//! `det M = Π det D_e · det(Schur complement)`, so the log-determinant is
//! accumulated from the eliminated pivots of every level.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rayon::prelude::*;
use rayon::ThreadPool;

use super::SymBtd;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, chol_logdet, symmetrize};

#[derive(Debug, Clone)]
pub struct CrSolution {
    pub x: DMatrix<f64>,
    pub logdet: f64,
}

struct Level {
    diag: Vec<DMatrix<f64>>,
    upper: Vec<DMatrix<f64>>,
    rhs: Vec<DMatrix<f64>>,
    /// Original block index of each row of this level; used for error reports.
    origin: Vec<usize>,
}

struct Eliminated {
    level: Level,
    pivots: Vec<Cholesky<f64, Dyn>>,
}

/// Cyclic-reduction solve on a dedicated pool with `threads` workers
/// (`0` means available parallelism).
pub fn cr_solve(m: &SymBtd, rhs: &DMatrix<f64>, threads: usize) -> Result<CrSolution> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool construction");
    cr_solve_in(&pool, m, rhs)
}

/// Same as [`cr_solve`] on a caller-provided pool.
pub fn cr_solve_in(pool: &ThreadPool, m: &SymBtd, rhs: &DMatrix<f64>) -> Result<CrSolution> {
    let b = m.block_dim();
    let n = m.n_blocks();
    if rhs.nrows() != n * b {
        return Err(Error::DimensionMismatch {
            expected: n * b,
            got: rhs.nrows(),
        });
    }
    let top = Level {
        diag: m.diag().to_vec(),
        upper: m.upper().to_vec(),
        rhs: (0..n).map(|i| rhs.rows(i * b, b).into_owned()).collect(),
        origin: (0..n).collect(),
    };
    pool.install(|| solve_level(top))
        .map(|(blocks, logdet)| {
            let mut x = DMatrix::zeros(n * b, rhs.ncols());
            for (i, blk) in blocks.iter().enumerate() {
                x.rows_mut(i * b, b).copy_from(blk);
            }
            CrSolution { x, logdet }
        })
}

fn solve_level(top: Level) -> Result<(Vec<DMatrix<f64>>, f64)> {
    let mut stack: Vec<Eliminated> = Vec::new();
    let mut level = top;
    let mut logdet = 0.0;
    while level.diag.len() > 1 {
        let (next, elim, ld) = reduce(level)?;
        logdet += ld;
        stack.push(elim);
        level = next;
    }
    let mut root = level.diag.pop().expect("non-empty level");
    symmetrize(&mut root);
    let chol = cholesky(root).ok_or(Error::NotPositiveDefinite(level.origin[0]))?;
    logdet += chol_logdet(&chol);
    let mut x = vec![chol.solve(&level.rhs[0])];

    while let Some(elim) = stack.pop() {
        x = back_substitute(&elim, &x);
    }
    Ok((x, logdet))
}

fn reduce(level: Level) -> Result<(Level, Eliminated, f64)> {
    let n = level.diag.len();
    let pivots: Vec<Cholesky<f64, Dyn>> = (0..n)
        .into_par_iter()
        .step_by(2)
        .map(|e| {
            let mut d = level.diag[e].clone();
            symmetrize(&mut d);
            cholesky(d).ok_or(Error::NotPositiveDefinite(level.origin[e]))
        })
        .collect::<Result<_>>()?;
    let logdet: f64 = pivots.par_iter().map(chol_logdet).sum();

    let kept: Vec<(DMatrix<f64>, Option<DMatrix<f64>>, DMatrix<f64>)> = (1..n)
        .into_par_iter()
        .step_by(2)
        .map(|k| {
            let mut d = level.diag[k].clone();
            let mut r = level.rhs[k].clone();
            // left neighbour k-1 always exists
            let left = &pivots[(k - 1) / 2];
            let u_left = &level.upper[k - 1];
            let xl = left.solve(u_left);
            d -= u_left.tr_mul(&xl);
            r -= xl.tr_mul(&level.rhs[k - 1]);
            let mut coupling = None;
            if k + 1 < n {
                let right = &pivots[(k + 1) / 2];
                let u_right = &level.upper[k];
                let y = right.solve(&u_right.transpose());
                d -= u_right * &y;
                r -= y.tr_mul(&level.rhs[k + 1]);
                if k + 2 < n {
                    coupling = Some(-(y.tr_mul(&level.upper[k + 1])));
                }
            }
            symmetrize(&mut d);
            (d, coupling, r)
        })
        .collect();

    let mut diag = Vec::with_capacity(kept.len());
    let mut upper = Vec::with_capacity(kept.len().saturating_sub(1));
    let mut rhs = Vec::with_capacity(kept.len());
    for (d, c, r) in kept {
        diag.push(d);
        if let Some(c) = c {
            upper.push(c);
        }
        rhs.push(r);
    }
    debug_assert_eq!(upper.len() + 1, diag.len());
    let origin = (1..n).step_by(2).map(|k| level.origin[k]).collect();
    Ok((
        Level {
            diag,
            upper,
            rhs,
            origin,
        },
        Eliminated { level, pivots },
        logdet,
    ))
}

/// Recovers the eliminated (even) blocks of a level from the solved odd ones.
fn back_substitute(elim: &Eliminated, kept: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let lv = &elim.level;
    let n = lv.diag.len();
    let evens: Vec<DMatrix<f64>> = (0..n)
        .into_par_iter()
        .step_by(2)
        .map(|e| {
            let mut r = lv.rhs[e].clone();
            if e >= 1 {
                r -= lv.upper[e - 1].tr_mul(&kept[(e - 1) / 2]);
            }
            if e + 1 < n {
                r -= &lv.upper[e] * &kept[(e + 1) / 2];
            }
            elim.pivots[e / 2].solve(&r)
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i % 2 == 0 {
            out.push(evens[i / 2].clone());
        } else {
            out.push(kept[i / 2].clone());
        }
    }
    out
}
