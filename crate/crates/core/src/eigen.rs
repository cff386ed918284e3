//! Dense symmetric eigendecomposition.
//!
//! Householder reduction to tridiagonal form followed by the implicit QL
//! iteration with Wilkinson shifts (the classic tred2/tql2 pair), with the
//! orthogonal transforms accumulated so eigenvectors come out directly.
//! Eigenvalues are returned in ascending order with matching eigenvector
//! columns. Double precision throughout; graph Laplacians of desk-scale
//! sessions (L up to a few hundred) decompose in well under a second.

use crate::matrix::SquareMatrix;
use crate::{Error, Result};

/// Maximum QL iterations per eigenvalue before giving up.
const MAX_QL_ITER: usize = 50;

/// Eigenvalues (ascending) and eigenvectors (columns of the returned
/// matrix, `v.get(row, k)` is component `row` of eigenvector `k`).
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: SquareMatrix,
}

/// Decompose a symmetric matrix. Symmetry is the caller's contract; only
/// the lower triangle would be needed but the full matrix is read.
pub fn symmetric_eigen(m: &SquareMatrix) -> Result<EigenDecomposition> {
    let n = m.n();
    if n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    tred2(&mut v, &mut d, &mut e, true);
    tql2(&mut v, &mut d, &mut e, true)?;

    // Ascending selection sort, swapping eigenvector columns alongside.
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        for j in i + 1..n {
            if d[j] < d[k] {
                k = j;
            }
        }
        if k != i {
            d.swap(i, k);
            for row in v.iter_mut() {
                row.swap(i, k);
            }
        }
    }

    let mut vectors = SquareMatrix::zeros(n);
    for (i, row) in v.iter().enumerate() {
        for (j, &val) in row.iter().enumerate() {
            vectors.set(i, j, val);
        }
    }
    Ok(EigenDecomposition { values: d, vectors })
}

/// Ascending eigenvalues only — skips the transform accumulation and the
/// QL rotations, roughly a 3× saving. Used by the per-p eigengap search,
/// which never needs eigenvectors.
pub fn symmetric_eigenvalues(m: &SquareMatrix) -> Result<Vec<f64>> {
    let n = m.n();
    if n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    tred2(&mut v, &mut d, &mut e, false);
    tql2(&mut v, &mut d, &mut e, false)?;
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Householder reduction of `v` (input matrix, overwritten with the
/// accumulated transform) to tridiagonal form in `d` (diagonal) and `e`
/// (subdiagonal, e[0] unused). With `accumulate` false the expensive
/// transform products are skipped and `v` holds no meaningful output.
fn tred2(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64], accumulate: bool) {
    let n = v.len();
    d.copy_from_slice(&v[n - 1]);

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for item in d.iter().take(i) {
            scale += item.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
                v[j][i] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for item in e.iter_mut().take(i) {
                *item = 0.0;
            }

            for j in 0..i {
                let f = d[j];
                v[j][i] = f;
                let mut g = e[j] + v[j][j] * f;
                for k in j + 1..i {
                    g += v[k][j] * d[k];
                    e[k] += v[k][j] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                for k in j..i {
                    v[k][j] -= f * e[k] + g * d[k];
                }
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
            }
        }
        d[i] = h;
    }

    // Accumulate the Householder transforms. The bookkeeping that moves
    // the tridiagonal diagonal into the last row must run even when the
    // transforms themselves are not wanted.
    for i in 0..n - 1 {
        v[n - 1][i] = v[i][i];
        v[i][i] = 1.0;
        let h = d[i + 1];
        if accumulate && h != 0.0 {
            for k in 0..=i {
                d[k] = v[k][i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[k][i + 1] * v[k][j];
                }
                for k in 0..=i {
                    v[k][j] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[k][i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[n - 1][j];
        v[n - 1][j] = 0.0;
    }
    v[n - 1][n - 1] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL iteration on the tridiagonal (d, e), transforms applied to
/// the columns of `v` when `rotate` is set. Fails if any eigenvalue needs
/// more than `MAX_QL_ITER` sweeps.
fn tql2(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64], rotate: bool) -> Result<()> {
    let n = v.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0f64;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m >= n {
            m = n - 1;
        }

        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITER {
                    return Err(Error::EigenNoConvergence(iter));
                }

                // Wilkinson-style shift.
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for item in d.iter_mut().take(n).skip(l + 2) {
                    *item -= h;
                }
                f += h;

                // Implicit QL sweep from m down to l.
                p = d[m];
                let mut c = 1.0f64;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0f64;
                let mut s2 = 0.0f64;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if rotate {
                        for row in v.iter_mut().take(n) {
                            let h = row[i + 1];
                            row[i + 1] = s * row[i] + c * h;
                            row[i] = c * row[i] - s * h;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;

                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}
