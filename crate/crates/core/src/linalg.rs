//! Small dense complex linear algebra on column-major buffers.
//!
//! Everything here works on matrices of a few dozen rows at most, so the
//! routines favour contiguous column sweeps over blocking.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub(crate) type C64 = Complex64;

#[inline]
pub(crate) fn idx(i: usize, j: usize, d: usize) -> usize {
    i + j * d
}

/// Lower Cholesky factor of a Hermitian matrix, in place. Only the lower
/// triangle of `a` is read. Returns false if a pivot is not positive.
pub(crate) fn cholesky_in_place(a: &mut [C64], d: usize) -> bool {
    for j in 0..d {
        for k in 0..j {
            let c = a[idx(j, k, d)].conj();
            if c == C64::new(0.0, 0.0) {
                continue;
            }
            let (left, right) = a.split_at_mut(j * d);
            let colk = &left[k * d..k * d + d];
            let colj = &mut right[..d];
            for i in j..d {
                colj[i] -= colk[i] * c;
            }
        }
        let pivot = a[idx(j, j, d)].re;
        if !(pivot > 0.0) || !pivot.is_finite() {
            return false;
        }
        let s = pivot.sqrt();
        a[idx(j, j, d)] = C64::new(s, 0.0);
        let inv = 1.0 / s;
        for i in j + 1..d {
            a[idx(i, j, d)] *= inv;
        }
    }
    true
}

/// ln det from a Cholesky factor.
pub(crate) fn chol_logdet(l: &[C64], d: usize) -> f64 {
    2.0 * (0..d).map(|i| l[idx(i, i, d)].re.ln()).sum::<f64>()
}

/// Solves L y = b in place for one column.
pub(crate) fn forward_solve(l: &[C64], d: usize, b: &mut [C64]) {
    for j in 0..d {
        let yj = b[j] / l[idx(j, j, d)].re;
        b[j] = yj;
        let col = &l[j * d..j * d + d];
        for i in j + 1..d {
            b[i] -= col[i] * yj;
        }
    }
}

/// Solves Lᴴ x = y in place for one column.
pub(crate) fn backward_solve(l: &[C64], d: usize, b: &mut [C64]) {
    for j in (0..d).rev() {
        let col = &l[j * d..j * d + d];
        let mut s = b[j];
        for i in j + 1..d {
            s -= col[i].conj() * b[i];
        }
        b[j] = s / col[j].re;
    }
}

/// Solves A X = B in place given A = L Lᴴ; B has `ncols` columns of length d.
pub(crate) fn chol_solve(l: &[C64], d: usize, b: &mut [C64], ncols: usize) {
    for c in 0..ncols {
        let col = &mut b[c * d..c * d + d];
        forward_solve(l, d, col);
        backward_solve(l, d, col);
    }
}

/// R factor of a Householder QR of an n×s column-major matrix.
/// Returns a d×s column-major matrix with d = min(n, s); C = Q R for unitary Q.
pub(crate) fn qr_r_factor(a: &[C64], n: usize, s: usize) -> Vec<C64> {
    let d = n.min(s);
    let mut w = a.to_vec();
    let mut v = vec![C64::new(0.0, 0.0); n];
    for k in 0..d {
        let col = &w[k * n..k * n + n];
        let norm2: f64 = col[k..].iter().map(|z| z.norm_sqr()).sum();
        let norm = norm2.sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = col[k];
        let phase = if x0.norm() > 0.0 { x0 / x0.norm() } else { C64::new(1.0, 0.0) };
        let alpha = -phase * norm;
        for i in k..n {
            v[i] = col[i];
        }
        v[k] -= alpha;
        let vnorm2: f64 = v[k..n].iter().map(|z| z.norm_sqr()).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;
        for j in k..s {
            let cj = &mut w[j * n..j * n + n];
            let mut dot = C64::new(0.0, 0.0);
            for i in k..n {
                dot += v[i].conj() * cj[i];
            }
            let f = dot * beta;
            for i in k..n {
                cj[i] -= v[i] * f;
            }
        }
        // Column k is now alpha e_k up to rounding.
        let ck = &mut w[k * n..k * n + n];
        ck[k] = alpha;
        for z in ck[k + 1..].iter_mut() {
            *z = C64::new(0.0, 0.0);
        }
    }
    let mut r = vec![C64::new(0.0, 0.0); d * s];
    for j in 0..s {
        for i in 0..d.min(j + 1) {
            r[idx(i, j, d)] = w[idx(i, j, n)];
        }
    }
    r
}

/// Eigenvalues of a Hermitian matrix, sorted nonincreasing.
pub(crate) fn hermitian_eigenvalues(a: &[C64], d: usize) -> Vec<f64> {
    if d == 0 {
        return Vec::new();
    }
    let m = DMatrix::from_column_slice(d, d, a);
    let ev = m.symmetric_eigenvalues();
    let mut v: Vec<f64> = ev.iter().copied().collect();
    v.sort_by(|x, y| y.total_cmp(x));
    v
}

/// Aᴴ A for an n×s column-major matrix.
pub(crate) fn gram_cols(a: &[C64], n: usize, s: usize) -> Vec<C64> {
    let mut g = vec![C64::new(0.0, 0.0); s * s];
    for j in 0..s {
        let cj = &a[j * n..j * n + n];
        for i in 0..=j {
            let ci = &a[i * n..i * n + n];
            let mut acc = C64::new(0.0, 0.0);
            for r in 0..n {
                acc += ci[r].conj() * cj[r];
            }
            g[idx(i, j, s)] = acc;
            g[idx(j, i, s)] = acc.conj();
        }
        g[idx(j, j, s)].im = 0.0;
    }
    g
}

/// A Aᴴ for an n×s column-major matrix.
pub(crate) fn gram_rows(a: &[C64], n: usize, s: usize) -> Vec<C64> {
    let mut g = vec![C64::new(0.0, 0.0); n * n];
    for k in 0..s {
        let ck = &a[k * n..k * n + n];
        for j in 0..n {
            let c = ck[j].conj();
            for i in j..n {
                g[idx(i, j, n)] += ck[i] * c;
            }
        }
    }
    for j in 0..n {
        for i in j + 1..n {
            g[idx(j, i, n)] = g[idx(i, j, n)].conj();
        }
        g[idx(j, j, n)].im = 0.0;
    }
    g
}

/// L·X for lower-triangular L (d×d) and X with `k` columns.
pub(crate) fn lower_mul(l: &[C64], d: usize, x: &[C64], k: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); d * k];
    for c in 0..k {
        let xc = &x[c * d..c * d + d];
        let oc = &mut out[c * d..c * d + d];
        for j in 0..d {
            let v = xc[j];
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            let col = &l[j * d..j * d + d];
            for i in j..d {
                oc[i] += col[i] * v;
            }
        }
    }
    out
}

/// Lᴴ·X for lower-triangular L (d×d) and X with `k` columns.
pub(crate) fn lower_adj_mul(l: &[C64], d: usize, x: &[C64], k: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); d * k];
    for c in 0..k {
        let xc = &x[c * d..c * d + d];
        let oc = &mut out[c * d..c * d + d];
        for j in 0..d {
            let col = &l[j * d..j * d + d];
            let mut acc = C64::new(0.0, 0.0);
            for i in j..d {
                acc += col[i].conj() * xc[i];
            }
            oc[j] = acc;
        }
    }
    out
}

/// Aᴴ·B for A (d×p) and B (d×q); result p×q.
pub(crate) fn adj_mul(a: &[C64], b: &[C64], d: usize, p: usize, q: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); p * q];
    for j in 0..q {
        let bj = &b[j * d..j * d + d];
        for i in 0..p {
            let ai = &a[i * d..i * d + d];
            let mut acc = C64::new(0.0, 0.0);
            for r in 0..d {
                acc += ai[r].conj() * bj[r];
            }
            out[idx(i, j, p)] = acc;
        }
    }
    out
}

/// Replaces a square matrix by its Hermitian part.
pub(crate) fn hermitize(a: &mut [C64], d: usize) {
    for j in 0..d {
        for i in j + 1..d {
            let v = 0.5 * (a[idx(i, j, d)] + a[idx(j, i, d)].conj());
            a[idx(i, j, d)] = v;
            a[idx(j, i, d)] = v.conj();
        }
        a[idx(j, j, d)].im = 0.0;
    }
}

/// Orthonormal basis of the span of `k0` columns of length d, by modified
/// Gram-Schmidt with one reorthogonalization pass. Columns whose residual
/// falls below `rel_tol` times their original norm are dropped.
pub(crate) fn orthonormal_basis(cols: &[C64], d: usize, k0: usize, rel_tol: f64) -> (Vec<C64>, usize) {
    let mut basis: Vec<C64> = Vec::with_capacity(d * k0.min(d));
    let mut k = 0;
    for c in 0..k0 {
        if k == d {
            break;
        }
        let mut v = cols[c * d..c * d + d].to_vec();
        let norm0 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for b in 0..k {
                let q = &basis[b * d..b * d + d];
                let mut dot = C64::new(0.0, 0.0);
                for i in 0..d {
                    dot += q[i].conj() * v[i];
                }
                for i in 0..d {
                    v[i] -= q[i] * dot;
                }
            }
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm <= rel_tol * norm0 {
            continue;
        }
        basis.extend(v.iter().map(|z| z / norm));
        k += 1;
    }
    (basis, k)
}
