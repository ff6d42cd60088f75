//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Index of `(i, j)` with `i <= j` in packed upper-triangular storage of a
/// `k x k` symmetric matrix.
#[inline]
pub fn packed_index(i: usize, j: usize, k: usize) -> usize {
    debug_assert!(i <= j && j < k);
    i * k - i * (i + 1) / 2 + j
}

pub fn packed_len(k: usize) -> usize {
    k * (k + 1) / 2
}

/// Adds `w * v v'` to the packed upper triangle.
#[inline]
pub fn packed_rank1(packed: &mut [f64], v: &[f64], w: f64) {
    let k = v.len();
    let mut idx = 0;
    for i in 0..k {
        let wi = w * v[i];
        for vj in &v[i..k] {
            packed[idx] += wi * vj;
            idx += 1;
        }
    }
}

pub fn unpack_symmetric(packed: &[f64], k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k, k);
    let mut idx = 0;
    for i in 0..k {
        for j in i..k {
            m[(i, j)] = packed[idx];
            m[(j, i)] = packed[idx];
            idx += 1;
        }
    }
    m
}

/// Solves `A x = b` for symmetric positive (semi)definite `A`. If the plain
/// Cholesky factorisation fails, retries once with `1e-10 * trace / k`
/// added to the diagonal.
pub fn solve_spd_with_ridge(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let finite = |x: &DVector<f64>| x.iter().all(|v| v.is_finite());
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if finite(&x) {
            return Ok(x);
        }
    }
    let k = a.nrows();
    let trace = a.trace();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::Singular);
    }
    let ridge = 1e-10 * trace / k as f64;
    let mut r = a.clone();
    for i in 0..k {
        r[(i, i)] += ridge;
    }
    r.cholesky()
        .map(|ch| ch.solve(b))
        .filter(finite)
        .ok_or(Error::Singular)
}

pub fn inverse_spd(a: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    a.clone()
        .cholesky()
        .map(|ch| ch.inverse())
        .ok_or(Error::NotPositiveDefinite(what))
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let k = a.nrows();
    for i in 0..k {
        for j in (i + 1)..k {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Eigenvalues of `B^{-1/2} A B^{-1/2}` for symmetric `A` and SPD `B`,
/// ascending. Used to compare covariance matrices in the Loewner order.
pub fn relative_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    let l = b
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("reference matrix"))?
        .l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite("reference matrix"))?;
    let mut m = &linv * a * linv.transpose();
    symmetrize(&mut m);
    let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(ev)
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::InvalidArgument("ragged matrix".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}
