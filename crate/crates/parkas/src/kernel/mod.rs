//! Dense matrix/vector kernel with a deterministic flop-cost model.
//!
//! Every charged operation credits a ledger with a fixed, published cost so
//! that span/work comparisons between algorithms are reproducible:
//!
//! | operation                  | flops                     |
//! |----------------------------|---------------------------|
//! | gemm (m x k)(k x n)        | 2mkn                      |
//! | matrix add/sub             | mn                        |
//! | adding the identity        | n                         |
//! | matrix-vector product      | 2mn                       |
//! | vector add/sub             | n                         |
//! | dot product                | 2n                        |
//! | scalar multiply of matrix  | mn                        |
//! | LU factorization (n x n)   | ceil(2n^3 / 3)            |
//! | triangular solves, per rhs | 2n^2                      |
//! | scalar op, log, exp, sqrt  | 1                         |
//!
//! Symmetrization `(A + A^T)/2` is a stabilization step outside the
//! filtering algebra and is free, as are transposes and copies.

mod ledger;
mod lu;
mod matrix;

pub use ledger::{FlopLedger, LedgerRecord};
pub use lu::{psd_cholesky, sym_eigenvalues, SINGULAR_TOL};
pub use matrix::{Matrix, Vector};

use crate::error::{Error, Result};

fn dim_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::DimMismatch {
        op,
        detail: format!("{}x{} with {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
    }
}

/// Cost of one LU factorization of an n x n matrix: ceil(2n^3/3).
pub fn lu_cost(n: usize) -> u64 {
    let n = n as u64;
    (2 * n * n * n).div_ceil(3)
}

/// Cost of a linear solve with `rhs` right-hand sides: LU plus 2n^2 per rhs.
pub fn solve_cost(n: usize, rhs: usize) -> u64 {
    lu_cost(n) + 2 * (n * n * rhs) as u64
}

/// Matrix product, charged 2mkn.
pub fn matmul(a: &Matrix, b: &Matrix, ledger: &mut FlopLedger) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(dim_err("matmul", a, b));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(m, n);
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out.as_mut_slice()[i * n..(i + 1) * n];
        for (l, &ail) in arow.iter().enumerate().take(k) {
            let brow = b.row(l);
            for j in 0..n {
                orow[j] += ail * brow[j];
            }
        }
    }
    ledger.charge("matmul", 2 * (m * k * n) as u64);
    Ok(out)
}

/// Matrix-vector product, charged 2mn.
pub fn matvec(a: &Matrix, x: &Vector, ledger: &mut FlopLedger) -> Result<Vector> {
    if a.cols() != x.dim() {
        return Err(Error::DimMismatch {
            op: "matvec",
            detail: format!("{}x{} with vector of dim {}", a.rows(), a.cols(), x.dim()),
        });
    }
    let mut out = Vector::zeros(a.rows());
    for i in 0..a.rows() {
        let mut s = 0.0;
        for (j, &v) in a.row(i).iter().enumerate() {
            s += v * x.get(j);
        }
        out.set(i, s);
    }
    ledger.charge("matvec", 2 * (a.rows() * a.cols()) as u64);
    Ok(out)
}

/// Elementwise matrix sum, charged mn.
pub fn mat_add(a: &Matrix, b: &Matrix, ledger: &mut FlopLedger) -> Result<Matrix> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(dim_err("mat_add", a, b));
    }
    let mut out = a.clone();
    for (o, &v) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o += v;
    }
    ledger.charge("mat_add", (a.rows() * a.cols()) as u64);
    Ok(out)
}

/// Elementwise matrix difference, charged mn.
pub fn mat_sub(a: &Matrix, b: &Matrix, ledger: &mut FlopLedger) -> Result<Matrix> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(dim_err("mat_sub", a, b));
    }
    let mut out = a.clone();
    for (o, &v) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o -= v;
    }
    ledger.charge("mat_sub", (a.rows() * a.cols()) as u64);
    Ok(out)
}

/// `I + A` for square `A`, charged n (diagonal adds only).
pub fn add_identity(a: &Matrix, ledger: &mut FlopLedger) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::DimMismatch {
            op: "add_identity",
            detail: format!("{}x{} not square", a.rows(), a.cols()),
        });
    }
    let mut out = a.clone();
    for i in 0..a.rows() {
        let v = out.get(i, i);
        out.set(i, i, v + 1.0);
    }
    ledger.charge("add_identity", a.rows() as u64);
    Ok(out)
}

/// Scalar multiple of a matrix, charged mn.
pub fn mat_scale(a: &Matrix, s: f64, ledger: &mut FlopLedger) -> Matrix {
    let mut out = a.clone();
    for o in out.as_mut_slice() {
        *o *= s;
    }
    ledger.charge("mat_scale", (a.rows() * a.cols()) as u64);
    out
}

/// Vector sum, charged n.
pub fn vec_add(a: &Vector, b: &Vector, ledger: &mut FlopLedger) -> Result<Vector> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            op: "vec_add",
            detail: format!("dims {} and {}", a.dim(), b.dim()),
        });
    }
    let mut out = a.clone();
    for (o, &v) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o += v;
    }
    ledger.charge("vec_add", a.dim() as u64);
    Ok(out)
}

/// Vector difference, charged n.
pub fn vec_sub(a: &Vector, b: &Vector, ledger: &mut FlopLedger) -> Result<Vector> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            op: "vec_sub",
            detail: format!("dims {} and {}", a.dim(), b.dim()),
        });
    }
    let mut out = a.clone();
    for (o, &v) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o -= v;
    }
    ledger.charge("vec_sub", a.dim() as u64);
    Ok(out)
}

/// Dot product, charged 2n.
pub fn dot(a: &Vector, b: &Vector, ledger: &mut FlopLedger) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            op: "dot",
            detail: format!("dims {} and {}", a.dim(), b.dim()),
        });
    }
    ledger.charge("dot", 2 * a.dim() as u64);
    Ok(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum())
}

/// Solves `A X = B` by LU with partial pivoting.
///
/// Charged ceil(2n^3/3) + 2n^2 per right-hand side. A pivot below
/// `SINGULAR_TOL * max|A_ij|` raises an explicit singular-matrix error.
pub fn solve(a: &Matrix, b: &Matrix, ledger: &mut FlopLedger) -> Result<Matrix> {
    if !a.is_square() || a.rows() != b.rows() {
        return Err(dim_err("solve", a, b));
    }
    let n = a.rows();
    let factors = lu::lu_factor(a, "solve")?;
    let bt = b.transpose();
    let mut out_t = Matrix::zeros(b.cols(), n);
    let mut col = vec![0.0; n];
    for j in 0..b.cols() {
        factors.solve_column(bt.row(j), &mut col);
        out_t.as_mut_slice()[j * n..(j + 1) * n].copy_from_slice(&col);
    }
    ledger.charge("solve", solve_cost(n, b.cols()));
    Ok(out_t.transpose())
}

/// Solves `A x = b` for a single vector right-hand side.
pub fn solve_vec(a: &Matrix, b: &Vector, ledger: &mut FlopLedger) -> Result<Vector> {
    if !a.is_square() || a.rows() != b.dim() {
        return Err(Error::DimMismatch {
            op: "solve_vec",
            detail: format!("{}x{} with vector of dim {}", a.rows(), a.cols(), b.dim()),
        });
    }
    let factors = lu::lu_factor(a, "solve")?;
    let mut out = Vector::zeros(b.dim());
    factors.solve_column(b.as_slice(), out.as_mut_slice());
    ledger.charge("solve", solve_cost(a.rows(), 1));
    Ok(out)
}

/// Symmetric part `(A + A^T)/2`. Free in the ledger.
pub fn sym(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::DimMismatch {
            op: "sym",
            detail: format!("{}x{} not square", a.rows(), a.cols()),
        });
    }
    let n = a.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, 0.5 * (a.get(i, j) + a.get(j, i)));
        }
    }
    Ok(out)
}

/// Log-density of `N(x; mean, cov)`.
///
/// One LU factorization serves both the solve and the log-determinant.
/// Charged lu + 2n^2 + n (residual) + 2n (quadratic form) + 2n (log-det)
/// + 4 scalar ops. Errors if `cov` is singular or not positive definite.
pub fn gaussian_logpdf(x: &Vector, mean: &Vector, cov: &Matrix, ledger: &mut FlopLedger) -> Result<f64> {
    let n = x.dim();
    if mean.dim() != n || cov.rows() != n || !cov.is_square() {
        return Err(Error::DimMismatch {
            op: "gaussian_logpdf",
            detail: format!("x dim {}, mean dim {}, cov {}x{}", n, mean.dim(), cov.rows(), cov.cols()),
        });
    }
    let factors = lu::lu_factor(cov, "gaussian_logpdf")?;
    let (log_det, sign) = factors.log_abs_det();
    if sign <= 0.0 {
        return Err(Error::NotPsd { context: "gaussian_logpdf", value: sign });
    }
    let diff: Vec<f64> = x.as_slice().iter().zip(mean.as_slice()).map(|(a, b)| a - b).collect();
    let mut z = vec![0.0; n];
    factors.solve_column(&diff, &mut z);
    let quad: f64 = diff.iter().zip(&z).map(|(a, b)| a * b).sum();
    ledger.charge("gaussian_logpdf", lu_cost(n) + 2 * (n * n) as u64 + 5 * n as u64 + 4);
    const LN_2PI: f64 = 1.8378770664093453;
    Ok(-0.5 * (quad + log_det + n as f64 * LN_2PI))
}
