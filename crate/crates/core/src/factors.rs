//! Principal-component factor extraction.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative size of the r-th eigenvalue below which the panel is treated as
/// having effective rank below r.
pub const RANK_TOL: f64 = 1e-12;

/// Relative eigen-gap below which a warning is logged.
pub const EIGEN_GAP_TOL: f64 = 1e-10;

/// PC factors and loadings with `F'F/T = I` and `B'B = diag(lambda)`.
#[derive(Debug, Clone)]
pub struct PcEstimate {
    pub fhat: DMatrix<f64>,
    pub bhat: DMatrix<f64>,
    pub lambda_hat: DVector<f64>,
    pub r: usize,
}

/// Tolerances for [`extract_factors_with`].
#[derive(Debug, Clone, Copy)]
pub struct ExtractOptions {
    pub rank_tol: f64,
    pub gap_tol: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            rank_tol: RANK_TOL,
            gap_tol: EIGEN_GAP_TOL,
        }
    }
}

/// `sqrt(T)` times the top-`r` eigenvectors of `XX'/T`, loadings `X'F/T`.
///
/// Column signs are fixed so that the largest-magnitude entry of each
/// eigenvector is positive.
pub fn extract_factors(x: &DMatrix<f64>, r: usize) -> Result<PcEstimate> {
    extract_factors_with(x, r, ExtractOptions::default())
}

pub fn extract_factors_with(x: &DMatrix<f64>, r: usize, opts: ExtractOptions) -> Result<PcEstimate> {
    let (t, n) = x.shape();
    if r == 0 || r > n.min(t) {
        return Err(Error::config("r", format!("must satisfy 1 <= r <= min(N, T) = {}", n.min(t))));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite value in predictor panel".into()));
    }
    let tf = t as f64;
    let gram = x * x.transpose() / tf;
    let (vals, vecs) = linalg::sym_eigen_desc(&gram);

    let largest = vals[0];
    if !(largest > 0.0) || !(vals[r - 1] > opts.rank_tol * largest) {
        return Err(Error::RankDeficient {
            requested: r,
            index: r - 1,
            value: vals[r - 1],
            largest,
        });
    }
    for k in 0..r {
        let next = if k + 1 < vals.len() { vals[k + 1] } else { 0.0 };
        if (vals[k] - next) <= opts.gap_tol * largest {
            warn!("eigen-gap between components {} and {} is below tolerance", k + 1, k + 2);
        }
    }

    let mut top = vecs.columns(0, r).into_owned();
    linalg::canonical_column_signs(&mut top);
    let fhat = top * tf.sqrt();
    let bhat = x.transpose() * &fhat / tf;
    let lambda_hat = vals.rows(0, r).into_owned();
    Ok(PcEstimate {
        fhat,
        bhat,
        lambda_hat,
        r,
    })
}

/// `M_w X` with `M_w = I - W(W'W)^{-1}W'`.
pub fn project_out(x: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != w.nrows() {
        return Err(Error::DimensionMismatch {
            context: "project_out rows",
            expected: x.nrows(),
            actual: w.nrows(),
        });
    }
    let qr = linalg::CheckedQr::new(w, "observed regressors W")?;
    let q = qr.q();
    Ok(x - q * (q.transpose() * x))
}
