//! Dense linear-algebra helpers shared by the estimators.
//!
//! Matrices are `nalgebra` column-major `DMatrix<f64>`. The symmetric
//! eigendecomposition is delegated to `faer`, which is markedly faster than
//! the `nalgebra` implementation at the panel sizes used by the jackknife.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
///
/// Only the lower triangle of `m` is read.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let evd = fm.selfadjoint_eigendecomposition(faer::Side::Lower);
    let s = evd.s().column_vector();
    let u = evd.u();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s.read(b).total_cmp(&s.read(a)));

    let values = DVector::from_iterator(n, order.iter().map(|&k| s.read(k)));
    let vectors = DMatrix::from_fn(n, n, |i, j| u.read(i, order[j]));
    (values, vectors)
}

/// Flips columns so that the entry with the largest absolute value in each
/// column is positive. Returns the applied signs.
pub fn canonical_column_signs(m: &mut DMatrix<f64>) -> Vec<f64> {
    let mut signs = Vec::with_capacity(m.ncols());
    for j in 0..m.ncols() {
        let mut col = m.column_mut(j);
        let mut best = 0.0_f64;
        let mut best_abs = -1.0_f64;
        for v in col.iter() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = *v;
            }
        }
        let sign = if best < 0.0 { -1.0 } else { 1.0 };
        if sign < 0.0 {
            col.neg_mut();
        }
        signs.push(sign);
    }
    signs
}

/// Symmetric square root `V diag(sqrt(max(l, 0))) V'`.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(m);
    let d = DMatrix::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()));
    &vecs * d * vecs.transpose()
}

/// Symmetric inverse square root of a positive definite matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen_desc(m);
    let largest = vals.iter().cloned().fold(0.0_f64, f64::max);
    if let Some((k, _)) = vals
        .iter()
        .enumerate()
        .find(|(_, &v)| v <= f64::EPSILON * largest.max(f64::MIN_POSITIVE) * m.nrows() as f64)
    {
        return Err(Error::Singular { context, pivot: k });
    }
    let d = DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.sqrt()));
    Ok(&vecs * d * vecs.transpose())
}

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Condition number above which a small square matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Inverse of a small square matrix, rejecting numerically singular input.
pub fn inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let cond = condition_number(m);
    if !cond.is_finite() {
        return Err(Error::Singular { context, pivot: 0 });
    }
    if cond > MAX_CONDITION {
        return Err(Error::IllConditioned {
            context,
            condition: cond,
        });
    }
    m.clone()
        .lu()
        .try_inverse()
        .ok_or(Error::Singular { context, pivot: 0 })
}

/// Relative tolerance on the diagonal of `R` below which a column is
/// considered linearly dependent on its predecessors.
pub const QR_RANK_TOL: f64 = 1e-10;

/// Thin QR factorisation checked for full column rank.
pub struct CheckedQr {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl CheckedQr {
    pub fn new(a: &DMatrix<f64>, context: &'static str) -> Result<Self> {
        if a.nrows() < a.ncols() {
            return Err(Error::Singular {
                context,
                pivot: a.nrows(),
            });
        }
        let qr = a.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let scale = (0..r.ncols())
            .map(|j| a.column(j).norm())
            .fold(0.0_f64, f64::max);
        for j in 0..r.ncols() {
            if !(r[(j, j)].abs() > QR_RANK_TOL * scale.max(f64::MIN_POSITIVE)) {
                return Err(Error::Singular { context, pivot: j });
            }
        }
        Ok(Self { q, r })
    }

    /// Least-squares solution of `a x = b` for every column of `b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let qtb = self.q.transpose() * b;
        self.r
            .solve_upper_triangular(&qtb)
            .expect("diagonal of R checked at construction")
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let qtb = self.q.transpose() * b;
        self.r
            .solve_upper_triangular(&qtb)
            .expect("diagonal of R checked at construction")
    }

    /// `(A'A)^{-1}` computed as `R^{-1} R^{-T}`.
    pub fn gram_inverse(&self) -> DMatrix<f64> {
        let k = self.r.ncols();
        let rinv = self
            .r
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .expect("diagonal of R checked at construction");
        &rinv * rinv.transpose()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
}

/// Horizontal concatenation `(a, b)`.
pub fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows(), "hcat row mismatch");
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Columns of `m` in the given order.
pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest absolute off-diagonal entry of a square matrix.
pub fn max_abs_offdiag(m: &DMatrix<f64>) -> f64 {
    let mut out = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                out = out.max(m[(i, j)].abs());
            }
        }
    }
    out
}
