//! Small dense helpers shared by the kernel, BTD and oracle code.
//!
//! The matrix exponential follows the scaling-and-squaring scheme with
//! diagonal Padé approximants of degree 3, 5, 7, 9 and 13, selecting the
//! lowest degree whose backward-error bound covers the 1-norm of the input.

use nalgebra::{Cholesky, DMatrix, Dyn};

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Low-degree Padé approximant evaluated with plain even powers.
fn pade_low(a: &DMatrix<f64>, coef: &[f64]) -> DMatrix<f64> {
    let n = a.nrows();
    let a2 = a * a;
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut u_even = DMatrix::<f64>::zeros(n, n);
    let mut v = DMatrix::<f64>::zeros(n, n);
    for k in 0..coef.len() / 2 {
        v += &power * coef[2 * k];
        u_even += &power * coef[2 * k + 1];
        power = &power * &a2;
    }
    let u = a * u_even;
    pade_ratio(u, v)
}

fn pade_13(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let b = &PADE_13;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    pade_ratio(u, v)
}

fn pade_ratio(u: DMatrix<f64>, v: DMatrix<f64>) -> DMatrix<f64> {
    let p = &v + &u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular for scaled input")
}

/// Matrix exponential by scaling and squaring.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let norm = norm1(a);
    if norm == 0.0 {
        return DMatrix::identity(a.nrows(), a.ncols());
    }
    if norm <= THETA_3 {
        return pade_low(a, &PADE_3);
    }
    if norm <= THETA_5 {
        return pade_low(a, &PADE_5);
    }
    if norm <= THETA_7 {
        return pade_low(a, &PADE_7);
    }
    if norm <= THETA_9 {
        return pade_low(a, &PADE_9);
    }
    let s = (norm / THETA_13).log2().ceil().max(0.0) as i32;
    let scaled = a / 2f64.powi(s);
    let mut r = pade_13(&scaled);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Returns `(expm(F·dt), d/dθ expm(F·dt))` given `dF/dθ`, read off the
/// blocks of the exponential of `[[F, dF], [0, F]]·dt`.
pub fn expm_frechet(f: &DMatrix<f64>, df: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = f.nrows();
    let mut aug = DMatrix::<f64>::zeros(2 * b, 2 * b);
    aug.view_mut((0, 0), (b, b)).copy_from(&(f * dt));
    aug.view_mut((0, b), (b, b)).copy_from(&(df * dt));
    aug.view_mut((b, b), (b, b)).copy_from(&(f * dt));
    let e = expm(&aug);
    (
        e.view((0, 0), (b, b)).into_owned(),
        e.view((0, b), (b, b)).into_owned(),
    )
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Cholesky that also rejects non-finite input, which nalgebra lets through.
pub fn cholesky(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if m.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let c = Cholesky::new(m)?;
    if c.l_dirty().diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
        Some(c)
    } else {
        None
    }
}

pub fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Trace of `a·b` without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.tr_dot(b)
}

/// Householder reduction of `m` to upper-triangular form in place (the `R`
/// of a QR factorization, up to row signs). Entries below the diagonal are
/// set to zero.
pub fn triangularize(m: &mut DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let data = m.as_mut_slice();
    let mut v = vec![0.0; rows];
    for k in 0..cols.min(rows) {
        let len = rows - k;
        if len < 2 {
            break;
        }
        let (head, tail) = data.split_at_mut((k + 1) * rows);
        let x = &mut head[k * rows + k..];
        let norm = x.iter().map(|e| e * e).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let v = &mut v[..len];
        v.copy_from_slice(x);
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|e| e * e).sum();
        if vv == 0.0 {
            continue;
        }
        x[0] = alpha;
        x[1..].fill(0.0);
        for col in tail.chunks_exact_mut(rows) {
            let seg = &mut col[k..];
            let dot: f64 = v.iter().zip(seg.iter()).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vv;
            seg.iter_mut().zip(v.iter()).for_each(|(s, a)| *s -= f * a);
        }
    }
    for c in 0..cols.min(rows) {
        data[c * rows + c + 1..(c + 1) * rows].fill(0.0);
    }
}

/// `xᵀ·M·y` for slices.
pub fn bilinear(x: &[f64], m: &DMatrix<f64>, y: &[f64]) -> f64 {
    m.as_slice()
        .chunks_exact(x.len())
        .zip(y)
        .map(|(col, yc)| col.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() * yc)
        .sum()
}

/// Solves `F·P + P·Fᵀ + C = 0` through the Kronecker-sum system.
///
/// `scale` is a diagonal similarity applied before solving (`P̃ = S·P·S`),
/// which keeps the linear system well conditioned when the state components
/// differ by many orders of magnitude.
pub fn lyapunov(f: &DMatrix<f64>, c: &DMatrix<f64>, scale: Option<&[f64]>) -> Option<DMatrix<f64>> {
    let n = f.nrows();
    let s: Vec<f64> = scale.map(|s| s.to_vec()).unwrap_or_else(|| vec![1.0; n]);
    let fs = DMatrix::from_fn(n, n, |i, j| s[i] * f[(i, j)] / s[j]);
    let cs = DMatrix::from_fn(n, n, |i, j| s[i] * c[(i, j)] * s[j]);
    let m = n * n;
    let mut sys = DMatrix::<f64>::zeros(m, m);
    let mut rhs = nalgebra::DVector::<f64>::zeros(m);
    // column-major vec: index of P[i, j] is i + j·n
    for j in 0..n {
        for i in 0..n {
            let row = i + j * n;
            for k in 0..n {
                sys[(row, k + j * n)] += fs[(i, k)];
                sys[(row, i + k * n)] += fs[(j, k)];
            }
            rhs[row] = -cs[(i, j)];
        }
    }
    let x = sys.lu().solve(&rhs)?;
    let mut p = DMatrix::from_fn(n, n, |i, j| x[i + j * n] / (s[i] * s[j]));
    symmetrize(&mut p);
    Some(p)
}


pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}
