//! LU factorization with partial pivoting, a PSD-tolerant Cholesky, and a
//! Jacobi eigensolver for small symmetric matrices.

use crate::error::{Error, Result};

use super::matrix::Matrix;

/// Relative pivot tolerance: a pivot below `SINGULAR_TOL * max|A_ij|` makes
/// the factorization fail with an explicit singular-matrix error.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Packed LU factors of a square matrix, `P A = L U`.
pub(crate) struct LuFactors {
    n: usize,
    /// Row-major combined storage: strict lower part holds L (unit diagonal
    /// implied), upper part holds U.
    lu: Vec<f64>,
    /// Row permutation: factor row `i` came from input row `perm[i]`.
    perm: Vec<usize>,
}

pub(crate) fn lu_factor(a: &Matrix, context: &'static str) -> Result<LuFactors> {
    assert!(a.is_square(), "lu_factor requires a square matrix");
    let n = a.rows();
    let mut lu = a.as_slice().to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let tol = SINGULAR_TOL * a.max_abs();

    for col in 0..n {
        // Partial pivoting on the current column.
        let mut piv_row = col;
        let mut piv_val = lu[col * n + col].abs();
        for r in col + 1..n {
            let v = lu[r * n + col].abs();
            if v > piv_val {
                piv_val = v;
                piv_row = r;
            }
        }
        if piv_val.is_nan() || piv_val <= tol {
            return Err(Error::Singular { context, pivot: piv_val, tol });
        }
        if piv_row != col {
            perm.swap(col, piv_row);
            for j in 0..n {
                lu.swap(col * n + j, piv_row * n + j);
            }
        }
        let pivot = lu[col * n + col];
        for r in col + 1..n {
            let factor = lu[r * n + col] / pivot;
            lu[r * n + col] = factor;
            for j in col + 1..n {
                lu[r * n + j] -= factor * lu[col * n + j];
            }
        }
    }
    Ok(LuFactors { n, lu, perm })
}

impl LuFactors {
    /// Solves for one right-hand side column in place.
    pub(crate) fn solve_column(&self, b: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            out[i] = b[self.perm[i]];
        }
        // Forward substitution with unit-diagonal L.
        for i in 0..n {
            for j in 0..i {
                out[i] -= self.lu[i * n + j] * out[j];
            }
        }
        // Back substitution with U.
        for i in (0..n).rev() {
            for j in i + 1..n {
                out[i] -= self.lu[i * n + j] * out[j];
            }
            out[i] /= self.lu[i * n + i];
        }
    }

    /// log|det A| and the sign of det A.
    pub(crate) fn log_abs_det(&self) -> (f64, f64) {
        let n = self.n;
        let mut log = 0.0;
        let mut sign = if permutation_parity(&self.perm) { -1.0 } else { 1.0 };
        for i in 0..n {
            let d = self.lu[i * n + i];
            log += d.abs().ln();
            if d < 0.0 {
                sign = -sign;
            }
        }
        (log, sign)
    }
}

fn permutation_parity(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    let mut odd = false;
    for start in 0..perm.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut at = start;
        while !seen[at] {
            seen[at] = true;
            at = perm[at];
            len += 1;
        }
        if len % 2 == 0 {
            odd = !odd;
        }
    }
    odd
}

/// Lower Cholesky factor of a symmetric positive semidefinite matrix.
///
/// Tolerates semidefiniteness: a diagonal term within `tol * scale` of zero
/// zeroes its column. A diagonal term below `-tol * scale` is an error.
/// Used for sampling, not in the filtering algebra; carries no flop charge.
pub fn psd_cholesky(a: &Matrix, context: &'static str) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::DimMismatch {
            op: "psd_cholesky",
            detail: format!("{}x{} not square", a.rows(), a.cols()),
        });
    }
    let n = a.rows();
    let scale = a.max_abs().max(1.0);
    let tol = 1e-10;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d < -tol * scale {
            return Err(Error::NotPsd { context, value: d });
        }
        if d <= tol * scale * 1e-4 {
            // Semidefinite direction: zero column.
            continue;
        }
        let dj = d.sqrt();
        l.set(j, j, dj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / dj);
        }
    }
    Ok(l)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
///
/// Intended for validation of small covariance matrices; no flop charge.
pub fn sym_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::DimMismatch {
            op: "sym_eigenvalues",
            detail: format!("{}x{} not square", a.rows(), a.cols()),
        });
    }
    let n = a.rows();
    let mut m = a.as_slice().to_vec();
    let idx = |i: usize, j: usize| i * n + j;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[idx(i, j)] * m[idx(i, j)];
            }
        }
        if off.sqrt() <= 1e-14 * a.max_abs().max(1.0) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[idx(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[idx(q, q)] - m[idx(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[idx(k, p)];
                    let akq = m[idx(k, q)];
                    m[idx(k, p)] = c * akp - s * akq;
                    m[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[idx(p, k)];
                    let aqk = m[idx(q, k)];
                    m[idx(p, k)] = c * apk - s * aqk;
                    m[idx(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[idx(i, i)]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(eig)
}
