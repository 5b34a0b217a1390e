//! Factor-augmented least squares, coefficient covariances and tests.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CheckedQr};

/// Two-sided 5% normal critical value.
pub const Z_975: f64 = 1.96;

/// Coefficient covariance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum CovKind {
    Homoskedastic,
    Heteroskedastic,
    /// Bartlett kernel; `None` picks `floor(T^{1/4})`.
    Hac { bandwidth: Option<usize> },
}

impl Default for CovKind {
    fn default() -> Self {
        CovKind::Heteroskedastic
    }
}

impl CovKind {
    pub const NAMES: [&'static str; 3] = ["homo", "hetero", "hac"];

    pub fn name(&self) -> &'static str {
        match self {
            CovKind::Homoskedastic => "homo",
            CovKind::Heteroskedastic => "hetero",
            CovKind::Hac { .. } => "hac",
        }
    }
}

impl fmt::Display for CovKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovKind::Hac { bandwidth: Some(l) } => write!(f, "hac({l})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for CovKind {
    type Err = Error;

    /// Accepts `homo`, `hetero`, `hac` and `hac(L)` / `hac:L`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "homo" | "homoskedastic" => return Ok(CovKind::Homoskedastic),
            "hetero" | "heteroskedastic" => return Ok(CovKind::Heteroskedastic),
            "hac" => return Ok(CovKind::Hac { bandwidth: None }),
            _ => {}
        }
        let arg = s
            .strip_prefix("hac(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("hac:"));
        match arg.map(str::parse::<usize>) {
            Some(Ok(l)) => Ok(CovKind::Hac { bandwidth: Some(l) }),
            _ => Err(Error::config(
                "cov",
                format!("unknown covariance '{s}', expected one of {:?}", CovKind::NAMES),
            )),
        }
    }
}

/// Default Newey-West bandwidth `floor(T^{1/4})`.
pub fn default_bandwidth(t: usize) -> usize {
    (t as f64).powf(0.25).floor() as usize
}

/// LS fit of `y` on `Z = (Fhat, W)`.
#[derive(Debug, Clone)]
pub struct AugmentedFit {
    /// `(gamma_hat', beta_hat')'`
    pub delta_hat: DVector<f64>,
    pub resid: DVector<f64>,
    pub ztz_over_t: DMatrix<f64>,
    /// Variance of `delta_hat` itself, already divided by `T`.
    pub cov_delta: Option<DMatrix<f64>>,
    pub cov_kind: Option<CovKind>,
    pub r: usize,
    pub p: usize,
    ztz_inv_t: DMatrix<f64>,
}

impl AugmentedFit {
    pub fn gamma_hat(&self) -> DVector<f64> {
        self.delta_hat.rows(0, self.r).into_owned()
    }

    pub fn beta_hat(&self) -> DVector<f64> {
        self.delta_hat.rows(self.r, self.p).into_owned()
    }

    pub fn t(&self) -> usize {
        self.resid.len()
    }

    /// `(Z'Z/T)^{-1}`, from the QR factor.
    pub fn ztz_over_t_inv(&self) -> &DMatrix<f64> {
        &self.ztz_inv_t
    }

    /// Attaches a covariance of the requested kind.
    pub fn with_cov(mut self, z: &DMatrix<f64>, kind: CovKind) -> Result<Self> {
        let cov = match kind {
            CovKind::Homoskedastic => cov_homo(&self),
            CovKind::Heteroskedastic => cov_sandwich_hetero(&self, z)?,
            CovKind::Hac { bandwidth } => {
                cov_hac(&self, z, bandwidth.unwrap_or_else(|| default_bandwidth(self.t())))?
            }
        };
        self.cov_delta = Some(cov);
        self.cov_kind = Some(kind);
        Ok(self)
    }

    /// Standard errors from the attached covariance.
    pub fn std_errors(&self) -> Option<DVector<f64>> {
        self.cov_delta
            .as_ref()
            .map(|c| DVector::from_iterator(c.nrows(), (0..c.nrows()).map(|k| c[(k, k)].max(0.0).sqrt())))
    }
}

/// Stacks `(Fhat, W)`.
pub fn design(fhat: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::hcat(fhat, w)
}

/// `delta_hat = (Z'Z)^{-1} Z'y` via a thin QR of `Z = (Fhat, W)`.
pub fn ols_augmented(y: &DVector<f64>, fhat: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<AugmentedFit> {
    let t = y.len();
    if fhat.nrows() != t || w.nrows() != t {
        return Err(Error::DimensionMismatch {
            context: "ols_augmented rows",
            expected: t,
            actual: if fhat.nrows() != t { fhat.nrows() } else { w.nrows() },
        });
    }
    let z = design(fhat, w);
    let qr = CheckedQr::new(&z, "augmented regressors (Fhat, W)")?;
    let delta_hat = qr.solve_vec(y);
    let resid = y - &z * &delta_hat;
    let tf = t as f64;
    Ok(AugmentedFit {
        delta_hat,
        resid,
        ztz_over_t: z.transpose() * &z / tf,
        cov_delta: None,
        cov_kind: None,
        r: fhat.ncols(),
        p: w.ncols(),
        ztz_inv_t: qr.gram_inverse() * tf,
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn check_z(fit: &AugmentedFit, z: &DMatrix<f64>) -> Result<()> {
    if z.nrows() != fit.t() || z.ncols() != fit.delta_hat.len() {
        return Err(Error::DimensionMismatch {
            context: "covariance design matrix",
            expected: fit.delta_hat.len(),
            actual: z.ncols(),
        });
    }
    Ok(())
}

/// `sigma^2 (Z'Z)^{-1}` with `sigma^2 = e'e/T`.
pub fn cov_homo(fit: &AugmentedFit) -> DMatrix<f64> {
    let t = fit.t() as f64;
    let s2 = fit.resid.norm_squared() / t;
    symmetrize(&fit.ztz_inv_t * (s2 / t))
}

/// Sandwich `(Z'Z/T)^{-1} Omega (Z'Z/T)^{-1} / T` with an explicit middle.
fn sandwich(fit: &AugmentedFit, omega: &DMatrix<f64>) -> DMatrix<f64> {
    let t = fit.t() as f64;
    symmetrize(&fit.ztz_inv_t * omega * &fit.ztz_inv_t / t)
}

/// Scores `z_t e_t` as the rows of a `T x k` matrix.
fn scores(fit: &AugmentedFit, z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = z.clone();
    for (mut row, e) in s.row_iter_mut().zip(fit.resid.iter()) {
        row *= *e;
    }
    s
}

/// White heteroskedasticity-robust covariance.
pub fn cov_sandwich_hetero(fit: &AugmentedFit, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_z(fit, z)?;
    let s = scores(fit, z);
    let omega = s.transpose() * &s / fit.t() as f64;
    Ok(sandwich(fit, &omega))
}

/// Newey-West covariance with Bartlett weights `1 - j/(L+1)`.
pub fn cov_hac(fit: &AugmentedFit, z: &DMatrix<f64>, bandwidth: usize) -> Result<DMatrix<f64>> {
    check_z(fit, z)?;
    let t = fit.t();
    if bandwidth >= t {
        return Err(Error::config("bandwidth", format!("must be below T = {t}")));
    }
    let s = scores(fit, z);
    let mut omega = s.transpose() * &s;
    for j in 1..=bandwidth {
        let wgt = 1.0 - j as f64 / (bandwidth as f64 + 1.0);
        let lead = s.rows(j, t - j);
        let lag = s.rows(0, t - j);
        let gamma_j = lead.transpose() * lag;
        omega += (&gamma_j + gamma_j.transpose()) * wgt;
    }
    omega /= t as f64;
    Ok(sandwich(fit, &omega))
}

fn require_cov(fit: &AugmentedFit) -> Result<&DMatrix<f64>> {
    fit.cov_delta
        .as_ref()
        .ok_or_else(|| Error::Numerical("fit has no covariance attached".into()))
}

/// Outcome of a two-sided 5% test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub stat: f64,
    pub reject_5pct: bool,
}

/// `t = (delta_k - null) / sqrt(cov_kk)`.
pub fn t_test(fit: &AugmentedFit, index: usize, null_value: f64) -> Result<TestResult> {
    let k = fit.delta_hat.len();
    if index >= k {
        return Err(Error::DimensionMismatch {
            context: "t_test index",
            expected: k,
            actual: index,
        });
    }
    let mut a = DVector::zeros(k);
    a[index] = 1.0;
    wald_linear(fit, &a, null_value)
}

/// `(a'delta - null) / sqrt(a' cov a)`.
pub fn wald_linear(fit: &AugmentedFit, a: &DVector<f64>, null_value: f64) -> Result<TestResult> {
    let cov = require_cov(fit)?;
    if a.len() != fit.delta_hat.len() {
        return Err(Error::DimensionMismatch {
            context: "wald_linear weights",
            expected: fit.delta_hat.len(),
            actual: a.len(),
        });
    }
    let var = (a.transpose() * cov * a)[(0, 0)];
    if !(var > 0.0) {
        return Err(Error::Numerical(format!("nonpositive test variance {var:e}")));
    }
    let stat = (a.dot(&fit.delta_hat) - null_value) / var.sqrt();
    Ok(TestResult {
        stat,
        reject_5pct: stat.abs() > Z_975,
    })
}
