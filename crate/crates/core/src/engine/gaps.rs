//! Node grids and per-gap precision terms.
//!
//! Regularly sampled data repeat the same few gaps, so every term that
//! depends only on the gap is computed once. Gaps are keyed by their bit
//! pattern with the 12 lowest mantissa bits dropped (relative resolution
//! about 2⁻⁴⁰), which also merges decimal-date gaps that differ by rounding.

use std::collections::HashMap;

use nalgebra::DMatrix;

use super::ObservationMask;
use crate::btd::SymBtd;
use crate::error::{Error, Result};
use crate::kernel::{discretize, discretize_all, StateSpaceModel};
use crate::linalg::{bilinear, chol_logdet, cholesky, symmetrize, trace_of_product};

/// State nodes and, for each node `i ≥ 1`, the index of the gap `t_i − t_{i−1}`.
/// Entry 0 of `gap_of` refers to the stationary anchor.
pub(crate) struct Grid {
    gap_of: Vec<usize>,
    /// Representative length of gap `k` (entry 0 unused).
    gaps: Vec<f64>,
    /// First node using gap `k`, for error reports.
    first_node: Vec<usize>,
}

fn gap_key(dt: f64) -> u64 {
    (dt.to_bits() + 0x800) >> 12
}

impl Grid {
    pub(crate) fn from_sorted(times: &[f64]) -> Self {
        let mut keys: HashMap<u64, usize> = HashMap::new();
        let mut gap_of = Vec::with_capacity(times.len());
        let mut gaps = vec![0.0];
        let mut first_node = vec![0];
        gap_of.push(0);
        for i in 1..times.len() {
            let dt = times[i] - times[i - 1];
            let k = *keys.entry(gap_key(dt)).or_insert_with(|| {
                gaps.push(dt);
                first_node.push(i);
                gaps.len() - 1
            });
            gap_of.push(k);
        }
        Self {
            gap_of,
            gaps,
            first_node,
        }
    }

    /// Merges training and test times. Returns the grid, the observation
    /// mask and the node of each test time (in request order).
    pub(crate) fn merged(train: &[f64], test: &[f64], eps: f64) -> (Self, ObservationMask, Vec<usize>) {
        // (time, is_train, source index)
        let mut nodes: Vec<(f64, bool, usize)> = train.iter().enumerate().map(|(i, t)| (*t, true, i)).collect();
        for (j, &t) in test.iter().enumerate() {
            let pos = train.partition_point(|x| *x < t);
            let near = [pos.checked_sub(1), Some(pos)]
                .into_iter()
                .flatten()
                .filter(|&k| k < train.len())
                .any(|k| (train[k] - t).abs() < eps);
            let t = if near { t + eps } else { t };
            nodes.push((t, false, j));
        }
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));

        let mut times: Vec<f64> = Vec::with_capacity(nodes.len());
        let mut observed = Vec::with_capacity(nodes.len());
        let mut test_node = vec![0; test.len()];
        for (t, is_train, src) in nodes {
            let shares_previous = !is_train
                && times.last().is_some_and(|last| t - last < eps)
                && !observed.last().copied().unwrap_or(true);
            if shares_previous {
                test_node[src] = times.len() - 1;
                continue;
            }
            if !is_train {
                test_node[src] = times.len();
            }
            times.push(t);
            observed.push(is_train);
        }
        (Self::from_sorted(&times), ObservationMask::new(observed), test_node)
    }

    pub(crate) fn len(&self) -> usize {
        self.gap_of.len()
    }

    /// Index into the gap table for node `i` (0 is the stationary anchor).
    pub(crate) fn gap_of(&self, i: usize) -> usize {
        self.gap_of[i]
    }
}

struct GapGrad {
    d_w: DMatrix<f64>,
    tr_w_dq: f64,
    d_phit_w_phi: DMatrix<f64>,
    d_neg_phit_w: DMatrix<f64>,
}

pub(crate) struct GapTerms {
    /// `L⁻¹` with `Q = L·Lᵀ`, and `L⁻¹·Φ`: the whitened transition rows.
    pub(crate) root: DMatrix<f64>,
    pub(crate) root_phi: DMatrix<f64>,
    w: DMatrix<f64>,
    logdet_q: f64,
    phit_w_phi: DMatrix<f64>,
    neg_phit_w: DMatrix<f64>,
    grads: Vec<GapGrad>,
}

pub(crate) struct GapTable {
    terms: Vec<GapTerms>,
}

/// `(Q⁻¹, ln det Q, L⁻¹)` with `Q = L·Lᵀ`.
fn invert_q(mut q: DMatrix<f64>, node: usize) -> Result<(DMatrix<f64>, f64, DMatrix<f64>)> {
    symmetrize(&mut q);
    let chol = cholesky(q).ok_or(Error::SingularProcessNoise(node))?;
    let b = chol.l_dirty().nrows();
    let root = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(b, b))
        .ok_or(Error::SingularProcessNoise(node))?;
    let mut w = root.tr_mul(&root);
    symmetrize(&mut w);
    Ok((w, chol_logdet(&chol), root))
}

impl GapTable {
    pub(crate) fn build(ssm: &StateSpaceModel, grid: &Grid, jitter_scale: f64, with_grad: bool) -> Result<Self> {
        let b = ssm.state_dim();
        let eye = DMatrix::<f64>::identity(b, b);
        let jitter = jitter_scale * ssm.p_inf.trace() / b as f64;
        let d_jitter: Vec<f64> = ssm
            .params
            .iter()
            .map(|p| jitter_scale * p.d_p_inf.trace() / b as f64)
            .collect();

        let mut terms = Vec::with_capacity(grid.gaps.len());
        // anchor: Q₀ = P∞
        let (w0, ld0, root0) = invert_q(&ssm.p_inf + &eye * jitter, 0)?;
        let grads = if with_grad {
            ssm.params
                .iter()
                .zip(&d_jitter)
                .map(|(p, dj)| {
                    let dq = &p.d_p_inf + &eye * *dj;
                    GapGrad {
                        d_w: -(&w0 * &dq * &w0),
                        tr_w_dq: trace_of_product(&w0, &dq),
                        d_phit_w_phi: DMatrix::zeros(0, 0),
                        d_neg_phit_w: DMatrix::zeros(0, 0),
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        terms.push(GapTerms {
            root: root0,
            root_phi: DMatrix::zeros(0, 0),
            w: w0,
            logdet_q: ld0,
            phit_w_phi: DMatrix::zeros(0, 0),
            neg_phit_w: DMatrix::zeros(0, 0),
            grads,
        });

        for k in 1..grid.gaps.len() {
            let step = if with_grad {
                discretize_all(ssm, grid.gaps[k])
            } else {
                discretize(ssm, grid.gaps[k])
            };
            let (w, logdet_q, root) = invert_q(&step.q + &eye * jitter, grid.first_node[k])?;
            let phit_w = step.phi.tr_mul(&w);
            let mut phit_w_phi = &phit_w * &step.phi;
            symmetrize(&mut phit_w_phi);
            let grads = step
                .grads
                .iter()
                .zip(&d_jitter)
                .map(|(g, dj)| {
                    let dq = &g.d_q + &eye * *dj;
                    let mut d_w = -(&w * &dq * &w);
                    symmetrize(&mut d_w);
                    let dphit_w = g.d_phi.tr_mul(&w);
                    let a = &dphit_w * &step.phi;
                    let mut d_phit_w_phi = &a + a.transpose() + step.phi.tr_mul(&d_w) * &step.phi;
                    symmetrize(&mut d_phit_w_phi);
                    GapGrad {
                        tr_w_dq: trace_of_product(&w, &dq),
                        d_neg_phit_w: -(dphit_w + step.phi.tr_mul(&d_w)),
                        d_phit_w_phi,
                        d_w,
                    }
                })
                .collect();
            terms.push(GapTerms {
                root_phi: &root * &step.phi,
                root,
                w,
                logdet_q,
                phit_w_phi,
                neg_phit_w: -phit_w,
                grads,
            });
        }
        Ok(Self { terms })
    }

    fn assemble<'a>(
        &'a self,
        grid: &Grid,
        w: impl Fn(&'a GapTerms) -> &'a DMatrix<f64>,
        ftf: impl Fn(&'a GapTerms) -> &'a DMatrix<f64>,
        off: impl Fn(&'a GapTerms) -> &'a DMatrix<f64>,
    ) -> SymBtd {
        let n = grid.len();
        let mut diag = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n {
            let here = &self.terms[grid.gap_of[i]];
            if i + 1 < n {
                let next = &self.terms[grid.gap_of[i + 1]];
                diag.push(w(here) + ftf(next));
                upper.push(off(next).clone());
            } else {
                diag.push(w(here).clone());
            }
        }
        SymBtd::new(diag, upper).expect("assembled blocks are consistent")
    }

    pub(crate) fn precision(&self, grid: &Grid) -> SymBtd {
        self.assemble(grid, |t| &t.w, |t| &t.phit_w_phi, |t| &t.neg_phit_w)
    }

    /// `∂𝒦⁻¹/∂θ_j`, assembled block by block from the product rule.
    #[cfg(test)]
    pub(crate) fn precision_derivative(&self, grid: &Grid, j: usize) -> SymBtd {
        self.assemble(
            grid,
            |t| &t.grads[j].d_w,
            |t| &t.grads[j].d_phit_w_phi,
            |t| &t.grads[j].d_neg_phit_w,
        )
    }

    /// `αᵀ·∂𝒦⁻¹/∂θ_j·α` and `Tr(C·∂𝒦⁻¹/∂θ_j)` for a symmetric `C` with the
    /// BTD pattern, straight from the gap terms.
    pub(crate) fn derivative_contractions(&self, grid: &Grid, j: usize, alpha: &DMatrix<f64>, c: &SymBtd) -> (f64, f64) {
        let n = grid.len();
        let a = alpha.as_slice();
        let b = a.len() / n;
        let (mut quad, mut trace) = (0.0, 0.0);
        for i in 0..n {
            let g = &self.terms[grid.gap_of[i]].grads[j];
            let ai = &a[i * b..(i + 1) * b];
            quad += bilinear(ai, &g.d_w, ai);
            trace += trace_of_product(&c.diag()[i], &g.d_w);
            if i + 1 < n {
                let next = &self.terms[grid.gap_of[i + 1]].grads[j];
                let an = &a[(i + 1) * b..(i + 2) * b];
                quad += bilinear(ai, &next.d_phit_w_phi, ai) + 2.0 * bilinear(ai, &next.d_neg_phit_w, an);
                trace += trace_of_product(&c.diag()[i], &next.d_phit_w_phi) + 2.0 * c.upper()[i].dot(&next.d_neg_phit_w);
            }
        }
        (quad, trace)
    }

    pub(crate) fn terms(&self, k: usize) -> &GapTerms {
        &self.terms[k]
    }

    /// `xᵀ·P_prior·x` as a sum of squared whitened innovations.
    pub(crate) fn prior_quadratic(&self, grid: &Grid, x: &DMatrix<f64>) -> f64 {
        let b = self.terms[0].root.nrows();
        (0..grid.len())
            .map(|i| {
                let t = &self.terms[grid.gap_of(i)];
                let mut e = &t.root * x.rows(i * b, b);
                if i > 0 {
                    e.gemm(-1.0, &t.root_phi, &x.rows((i - 1) * b, b), 1.0);
                }
                e.norm_squared()
            })
            .sum()
    }

    pub(crate) fn sum_logdet_q(&self, grid: &Grid) -> f64 {
        grid.gap_of.iter().map(|&k| self.terms[k].logdet_q).sum()
    }

    /// `Σ_i Tr(Q_i⁻¹·∂Q_i/∂θ_j)`.
    pub(crate) fn sum_trace_w_dq(&self, grid: &Grid, j: usize) -> f64 {
        grid.gap_of.iter().map(|&k| self.terms[k].grads[j].tr_w_dq).sum()
    }
}
