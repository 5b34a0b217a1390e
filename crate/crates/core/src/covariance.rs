//! Adaptive-threshold (POET) estimation of the idiosyncratic covariance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::PcEstimate;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdKind {
    #[default]
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoetConfig {
    pub threshold_const: f64,
    pub kind: ThresholdKind,
    pub enforce_psd: bool,
}

impl Default for PoetConfig {
    fn default() -> Self {
        Self {
            threshold_const: 0.5,
            kind: ThresholdKind::Hard,
            enforce_psd: true,
        }
    }
}

impl PoetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_const >= 0.0) {
            return Err(Error::config("poet_c", "threshold constant must be nonnegative"));
        }
        Ok(())
    }
}

/// Relative eigenvalue floor used when `enforce_psd` is set.
pub const PSD_FLOOR: f64 = 1e-8;

/// `Ehat = X - Fhat Bhat'`.
pub fn residual_matrix(x: &DMatrix<f64>, pc: &PcEstimate) -> Result<DMatrix<f64>> {
    if x.nrows() != pc.fhat.nrows() || x.ncols() != pc.bhat.nrows() {
        return Err(Error::DimensionMismatch {
            context: "residual_matrix",
            expected: pc.bhat.nrows(),
            actual: x.ncols(),
        });
    }
    Ok(x - &pc.fhat * pc.bhat.transpose())
}

/// Thresholded sample covariance of the residual panel.
pub fn poet_cov(ehat: &DMatrix<f64>, cfg: &PoetConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let (t, n) = ehat.shape();
    if t < 2 {
        return Err(Error::config("T", "POET needs at least two observations"));
    }
    let tf = t as f64;
    let mut s = ehat.transpose() * ehat / tf;
    s.fill_upper_triangle_with_lower_triangle();
    if cfg.threshold_const == 0.0 {
        return Ok(finish(s, cfg));
    }
    let omega = ((n as f64).ln() / tf).sqrt();

    // theta_ij = mean_t (e_ti e_tj)^2 - S_ij^2
    let sq = ehat.map(|v| v * v);
    let fourth = sq.transpose() * &sq / tf;
    let mut out = s.clone();
    for j in 0..n {
        for i in (j + 1)..n {
            let sij = s[(i, j)];
            let theta = (fourth[(i, j)] - sij * sij).max(0.0);
            let tau = cfg.threshold_const * theta.sqrt() * omega;
            let v = match cfg.kind {
                ThresholdKind::Hard => {
                    if sij.abs() > tau {
                        sij
                    } else {
                        0.0
                    }
                }
                ThresholdKind::Soft => sij.signum() * (sij.abs() - tau).max(0.0),
            };
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(finish(out, cfg))
}

fn finish(m: DMatrix<f64>, cfg: &PoetConfig) -> DMatrix<f64> {
    if !cfg.enforce_psd {
        return m;
    }
    let (vals, vecs) = linalg::sym_eigen_desc(&m);
    let floor = PSD_FLOOR * vals[0].max(0.0);
    if vals.iter().all(|&v| v >= floor) {
        return m;
    }
    let d = DMatrix::from_diagonal(&vals.map(|v| v.max(floor)));
    let fixed = &vecs * d * vecs.transpose();
    (&fixed + fixed.transpose()) * 0.5
}
