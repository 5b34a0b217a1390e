//! Analytical bias corrections and the randomized split-panel jackknife.

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::dgp;
use crate::error::{Error, Result};
use crate::factors::{self, PcEstimate};
use crate::linalg;
use crate::regression::{self, AugmentedFit};
use crate::rotations;

/// `Ghat = M (B'B)^{-2}` and `Gbar_hat = (B'B)^{-1} M (B'B)^{-1}` with
/// `M = Bhat' Sigma_e_hat Bhat`.
pub fn g_matrices(bhat: &DMatrix<f64>, sigma_e: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = bhat.nrows();
    if sigma_e.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            context: "g_matrices Sigma_e",
            expected: n,
            actual: sigma_e.nrows(),
        });
    }
    let m = bhat.transpose() * sigma_e * bhat;
    let btb_inv = linalg::inverse(&(bhat.transpose() * bhat), "Bhat'Bhat")?;
    let g = &m * &btb_inv * &btb_inv;
    let gbar = &btb_inv * &m * &btb_inv;
    Ok((g, gbar))
}

/// Output of [`analytic_bc`].
#[derive(Debug, Clone)]
pub struct AnalyticCorrection {
    pub delta_bc_hhat: DVector<f64>,
    pub delta_bc_hhat_q: DVector<f64>,
    pub kappa_hat: DVector<f64>,
    pub kappa_bar_hat: DVector<f64>,
}

/// Plug-in bias estimates and the corrected coefficient vectors.
pub fn analytic_bc(
    fit: &AugmentedFit,
    pc: &PcEstimate,
    w: &DMatrix<f64>,
    sigma_e: &DMatrix<f64>,
) -> Result<AnalyticCorrection> {
    let (r, p) = (fit.r, fit.p);
    let t = fit.t() as f64;
    let (g, gbar) = g_matrices(&pc.bhat, sigma_e)?;
    let gamma = fit.gamma_hat();
    let wf = w.transpose() * &pc.fhat / t;

    let mut upper = DVector::zeros(r + p);
    upper.rows_mut(0, r).copy_from(&((&g + &gbar) * &gamma));
    upper.rows_mut(r, p).copy_from(&(&wf * &g * &gamma));
    let kappa_hat = -(fit.ztz_over_t_inv() * upper);

    let mut lower = DVector::zeros(r + p);
    lower.rows_mut(r, p).copy_from(&(&wf * &gbar * &gamma));
    let kappa_bar_hat = fit.ztz_over_t_inv() * lower;

    Ok(AnalyticCorrection {
        delta_bc_hhat: &fit.delta_hat - &kappa_hat,
        delta_bc_hhat_q: &fit.delta_hat - &kappa_bar_hat,
        kappa_hat,
        kappa_bar_hat,
    })
}

/// Per-split record kept for diagnostics.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SplitRecord {
    /// Draws needed before both halves had full factor rank.
    pub attempts: usize,
    pub delta_half1: Vec<f64>,
    pub delta_half2: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct JackknifeMeta {
    pub r_splits: usize,
    pub seed: u64,
    pub redraws: usize,
    pub splits: Vec<SplitRecord>,
}

/// Maximum redraws per requested split.
pub const REDRAW_FACTOR: usize = 10;

/// Column index sets of the two halves for a permutation of `0..N`.
///
/// Both halves have `ceil(N/2)` columns; for odd `N` they share the middle
/// position of the permutation.
pub fn split_halves(perm: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let n = perm.len();
    let half = n.div_ceil(2);
    (perm[..half].to_vec(), perm[n - half..].to_vec())
}

/// Full-sample quantities the half-panel fits are compared against.
pub struct JackknifeBase<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
    pub w: &'a DMatrix<f64>,
    pub fhat: &'a DMatrix<f64>,
    pub delta_hat: &'a DVector<f64>,
}

impl<'a> JackknifeBase<'a> {
    fn half_delta(&self, cols: &[usize]) -> Result<DVector<f64>> {
        let r = self.fhat.ncols();
        let xs = linalg::select_columns(self.x, cols);
        let pc = factors::extract_factors(&xs, r)?;
        let aligned = rotations::align_factors(self.fhat, &pc.fhat)?.apply(&pc.fhat);
        Ok(regression::ols_augmented(self.y, &aligned, self.w)?.delta_hat)
    }

    fn split(&self, perm: &[usize]) -> Result<(DVector<f64>, DVector<f64>)> {
        let (a, b) = split_halves(perm);
        Ok((self.half_delta(&a)?, self.half_delta(&b)?))
    }

    fn combine(&self, halves: &[(DVector<f64>, DVector<f64>)]) -> DVector<f64> {
        let k = self.delta_hat.len();
        let mut acc = DVector::zeros(k);
        for (a, b) in halves {
            acc += (a + b) * 0.5;
        }
        acc /= halves.len() as f64;
        self.delta_hat * 2.0 - acc
    }
}

fn redrawable(e: &Error) -> bool {
    matches!(e, Error::RankDeficient { .. } | Error::Singular { .. } | Error::IllConditioned { .. })
}

/// `2 delta_hat - R^{-1} sum_s (delta_1 + delta_2)/2` over caller-supplied
/// permutations. Errors if any split is rank deficient.
pub fn jackknife_with_permutations(base: &JackknifeBase<'_>, perms: &[Vec<usize>]) -> Result<DVector<f64>> {
    if perms.is_empty() {
        return Err(Error::config("jk_r", "at least one split is required"));
    }
    let n = base.x.ncols();
    let halves = perms
        .iter()
        .map(|p| {
            if p.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "jackknife permutation",
                    expected: n,
                    actual: p.len(),
                });
            }
            base.split(p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(base.combine(&halves))
}

/// Randomized split-panel jackknife with `r_splits` splits drawn from a
/// single stream seeded by `seed`. Rank-deficient splits are redrawn.
pub fn jackknife_bc(base: &JackknifeBase<'_>, r_splits: usize, seed: u64) -> Result<(DVector<f64>, JackknifeMeta)> {
    let n = base.x.ncols();
    if n < 4 {
        return Err(Error::config("N", "the jackknife needs at least 4 cross-section units"));
    }
    if r_splits == 0 {
        return Err(Error::config("jk_r", "at least one split is required"));
    }
    let mut rng = dgp::stream(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut halves = Vec::with_capacity(r_splits);
    let mut splits = Vec::with_capacity(r_splits);
    let mut redraws = 0;
    let limit = REDRAW_FACTOR * r_splits;
    for s in 0..r_splits {
        let mut attempts = 0;
        loop {
            attempts += 1;
            for (i, v) in perm.iter_mut().enumerate() {
                *v = i;
            }
            perm.shuffle(&mut rng);
            match base.split(&perm) {
                Ok(pair) => {
                    splits.push(SplitRecord {
                        attempts,
                        delta_half1: pair.0.iter().cloned().collect(),
                        delta_half2: pair.1.iter().cloned().collect(),
                    });
                    halves.push(pair);
                    break;
                }
                Err(e) if redrawable(&e) => {
                    redraws += 1;
                    debug!("jackknife split {s} redrawn: {e}");
                    if redraws > limit {
                        return Err(Error::Numerical(format!(
                            "jackknife exceeded {limit} redraws of rank-deficient splits"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    let delta = base.combine(&halves);
    Ok((
        delta,
        JackknifeMeta {
            r_splits,
            seed,
            redraws,
            splits,
        },
    ))
}
