//! Packed representation of symmetric matrices.
//!
//! A symmetric n x n matrix is stored as the lower triangle in column-major
//! order with off-diagonal entries scaled by sqrt(2), so that the Euclidean
//! dot product of two packed vectors equals the Frobenius inner product
//! <A, B> = tr(A B) of the originals.

use nalgebra::DMatrix;

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Length of the packed form of an n x n symmetric matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Side length n recovered from a packed length, if it is triangular.
pub fn svec_dim(len: usize) -> Option<usize> {
    let n = ((((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1)) / 2;
    for cand in n.saturating_sub(1)..=n + 1 {
        if cand * (cand + 1) / 2 == len {
            return Some(cand);
        }
    }
    None
}

/// Packed index of entry (i, j) with i >= j.
#[inline]
pub fn svec_idx(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i >= j && i < n);
    j * (2 * n - j + 1) / 2 + (i - j)
}

/// Pack a symmetric matrix. Only the lower triangle is read.
pub fn svec(mat: &DMatrix<f64>) -> Vec<f64> {
    let n = mat.nrows();
    debug_assert_eq!(n, mat.ncols());
    let mut out = Vec::with_capacity(svec_len(n));
    for j in 0..n {
        for i in j..n {
            let v = mat[(i, j)];
            out.push(if i == j { v } else { SQRT2 * v });
        }
    }
    out
}

/// Unpack into a full symmetric matrix.
pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), svec_len(n));
    let mut out = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            let val = if i == j { v[k] } else { v[k] / SQRT2 };
            out[(i, j)] = val;
            out[(j, i)] = val;
            k += 1;
        }
    }
    out
}

/// Packed identity matrix of side n.
pub fn svec_identity(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; svec_len(n)];
    let mut k = 0;
    for j in 0..n {
        out[k] = 1.0;
        k += n - j;
    }
    out
}

/// Trace of a packed matrix.
pub fn svec_trace(v: &[f64], n: usize) -> f64 {
    let mut t = 0.0;
    let mut k = 0;
    for j in 0..n {
        t += v[k];
        k += n - j;
    }
    t
}
