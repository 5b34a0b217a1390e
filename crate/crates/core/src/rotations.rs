//! Rotation matrices linking the latent factors to the PC basis, the
//! pseudo-true coefficient vectors they imply, and subsample factor alignment.

use nalgebra::{DMatrix, DVector};

use crate::dgp::GroundTruth;
use crate::error::{Error, Result};
use crate::factors::PcEstimate;
use crate::linalg;

/// Rotations and pseudo-true factor coefficients for one dataset.
#[derive(Debug, Clone)]
pub struct RotationSet {
    pub h: DMatrix<f64>,
    pub hhat: DMatrix<f64>,
    pub hhat_q: DMatrix<f64>,
    pub gamma0: DVector<f64>,
    pub gamma_hhat: DVector<f64>,
    pub gamma_hhat_q: DVector<f64>,
}

impl RotationSet {
    /// Evaluates all three rotations for `(F*, B*)` against a PC estimate.
    pub fn compute(
        fstar: &DMatrix<f64>,
        bstar: &DMatrix<f64>,
        gamma_star: &DVector<f64>,
        pc: &PcEstimate,
    ) -> Result<Self> {
        let h = rotation_h(fstar, bstar)?;
        let hhat = rotation_hhat(fstar, bstar, pc)?;
        let hhat_q = rotation_hhat_q(fstar, pc)?;
        Ok(Self {
            gamma0: pseudo_true(gamma_star, &h)?,
            gamma_hhat: pseudo_true(gamma_star, &hhat)?,
            gamma_hhat_q: pseudo_true(gamma_star, &hhat_q)?,
            h,
            hhat,
            hhat_q,
        })
    }
}

/// The population rotation `H = P V^{-1/2} Pi`.
///
/// `P` holds the unit-norm eigenvectors of `B*'B* (F*'F*/T)` by descending
/// eigenvalue, `V = P'(F*'F*/T)P`, and `Pi = diag(+-1)` makes the diagonal of
/// `H` positive. The result satisfies `(F*H)'(F*H)/T = I` and
/// `(B*H'^{-1})'(B*H'^{-1})` diagonal.
pub fn rotation_h(fstar: &DMatrix<f64>, bstar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let t = fstar.nrows() as f64;
    let r = fstar.ncols();
    if bstar.ncols() != r {
        return Err(Error::DimensionMismatch {
            context: "rotation_h loadings",
            expected: r,
            actual: bstar.ncols(),
        });
    }
    let sff = fstar.transpose() * fstar / t;
    let sbb = bstar.transpose() * bstar;

    // Eigenvectors of the nonsymmetric product C S come from the symmetric
    // form S^{1/2} C S^{1/2}: if Q diagonalises it, S^{-1/2} Q diagonalises C S.
    let s_half = linalg::sym_sqrt(&sff);
    let s_inv_half = linalg::sym_inv_sqrt(&sff, "F*'F*/T")?;
    let sym = &s_half * &sbb * &s_half;
    let sym = (&sym + sym.transpose()) * 0.5;
    let (vals, q) = linalg::sym_eigen_desc(&sym);
    for k in 0..r {
        let next = if k + 1 < r { vals[k + 1] } else { 0.0 };
        if !(vals[k] - next > 1e-12 * vals[0].abs()) {
            return Err(Error::Numerical(format!(
                "B*'B*(F*'F*/T) has a repeated or nonpositive eigenvalue at position {}",
                k + 1
            )));
        }
    }
    let mut p = s_inv_half * q;
    for k in 0..r {
        let norm = p.column(k).norm();
        p.column_mut(k).unscale_mut(norm);
    }
    let v = p.transpose() * &sff * &p;
    let v = (&v + v.transpose()) * 0.5;
    let mut h = p * linalg::sym_inv_sqrt(&v, "V")?;
    for k in 0..r {
        if h[(k, k)] < 0.0 {
            h.column_mut(k).neg_mut();
        }
    }
    Ok(h)
}

/// `Hhat = B*'B* (F*'Fhat/T) Lambdahat^{-1}`.
pub fn rotation_hhat(fstar: &DMatrix<f64>, bstar: &DMatrix<f64>, pc: &PcEstimate) -> Result<DMatrix<f64>> {
    let t = fstar.nrows() as f64;
    if pc.lambda_hat.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Singular {
            context: "Lambdahat",
            pivot: pc.lambda_hat.iter().position(|l| !(*l > 0.0)).unwrap_or(0),
        });
    }
    let lam_inv = DMatrix::from_diagonal(&pc.lambda_hat.map(|l| 1.0 / l));
    Ok(bstar.transpose() * bstar * (fstar.transpose() * &pc.fhat / t) * lam_inv)
}

/// `Hhat_q = (Fhat'F*/T)^{-1}`.
pub fn rotation_hhat_q(fstar: &DMatrix<f64>, pc: &PcEstimate) -> Result<DMatrix<f64>> {
    let t = fstar.nrows() as f64;
    let cross = pc.fhat.transpose() * fstar / t;
    linalg::inverse(&cross, "Fhat'F*/T")
}

/// `R^{-1} gamma*`.
pub fn pseudo_true(gamma_star: &DVector<f64>, rot: &DMatrix<f64>) -> Result<DVector<f64>> {
    let qr = linalg::CheckedQr::new(rot, "rotation")?;
    let cond = linalg::condition_number(rot);
    if cond > linalg::MAX_CONDITION {
        return Err(Error::IllConditioned {
            context: "rotation",
            condition: cond,
        });
    }
    Ok(qr.solve_vec(gamma_star))
}

/// Appendix-style diagnostics that tend to the identity.
#[derive(Debug, Clone)]
pub struct TildeRotations {
    /// `B0'B0 (F0'Fhat/T) Lambdahat^{-1}`
    pub h_tilde: DMatrix<f64>,
    /// `(Fhat'F0/T)^{-1}`
    pub h_tilde_q: DMatrix<f64>,
    /// `B0'Bhat (Bhat'Bhat)^{-1}`
    pub h_tilde_b: DMatrix<f64>,
}

impl TildeRotations {
    /// Frobenius distances of the three matrices from the identity.
    pub fn distances_from_identity(&self) -> [f64; 3] {
        let r = self.h_tilde.nrows();
        let eye = DMatrix::<f64>::identity(r, r);
        [
            (&self.h_tilde - &eye).norm(),
            (&self.h_tilde_q - &eye).norm(),
            (&self.h_tilde_b - &eye).norm(),
        ]
    }
}

pub fn tilde_rotations(truth: &GroundTruth, pc: &PcEstimate) -> Result<TildeRotations> {
    let t = truth.f0.nrows() as f64;
    let lam_inv = DMatrix::from_diagonal(&pc.lambda_hat.map(|l| 1.0 / l));
    let h_tilde = truth.b0.transpose() * &truth.b0 * (truth.f0.transpose() * &pc.fhat / t) * lam_inv;
    let h_tilde_q = linalg::inverse(&(pc.fhat.transpose() * &truth.f0 / t), "Fhat'F0/T")?;
    let btb = pc.bhat.transpose() * &pc.bhat;
    let h_tilde_b = truth.b0.transpose() * &pc.bhat * linalg::inverse(&btb, "Bhat'Bhat")?;
    Ok(TildeRotations {
        h_tilde,
        h_tilde_q,
        h_tilde_b,
    })
}

/// Column correspondence between a reference factor matrix and a subsample one.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `perm[k]` is the subsample column matched to reference column `k`.
    pub perm: Vec<usize>,
    /// Sign applied to that subsample column.
    pub signs: Vec<f64>,
}

impl Alignment {
    /// Reorders and re-signs `f_sub` into the reference layout.
    pub fn apply(&self, f_sub: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(f_sub.nrows(), self.perm.len());
        for (k, (&j, &s)) in self.perm.iter().zip(&self.signs).enumerate() {
            out.set_column(k, &(f_sub.column(j) * s));
        }
        out
    }

    /// Carries the alignment over to a full PC estimate, eigenvalues included.
    pub fn apply_pc(&self, pc: &PcEstimate) -> PcEstimate {
        PcEstimate {
            fhat: self.apply(&pc.fhat),
            bhat: self.apply(&pc.bhat),
            lambda_hat: DVector::from_iterator(self.perm.len(), self.perm.iter().map(|&j| pc.lambda_hat[j])),
            r: pc.r,
        }
    }
}

fn column_correlations(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let t = a.nrows() as f64;
    let center = |m: &DMatrix<f64>| {
        let mut c = m.clone();
        for mut col in c.column_iter_mut() {
            let mean = col.sum() / t;
            col.add_scalar_mut(-mean);
            let norm = col.norm();
            if norm > 0.0 {
                col.unscale_mut(norm);
            }
        }
        c
    };
    center(a).transpose() * center(b)
}

/// Greedy maximum-|correlation| matching of subsample columns to reference
/// columns. Ties go to the lowest reference index.
pub fn align_factors(f_ref: &DMatrix<f64>, f_sub: &DMatrix<f64>) -> Result<Alignment> {
    if f_ref.shape() != f_sub.shape() {
        return Err(Error::DimensionMismatch {
            context: "align_factors",
            expected: f_ref.ncols(),
            actual: f_sub.ncols(),
        });
    }
    let r = f_ref.ncols();
    let corr = column_correlations(f_ref, f_sub);
    let mut perm = vec![usize::MAX; r];
    let mut signs = vec![1.0; r];
    let mut sub_used = vec![false; r];
    for _ in 0..r {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in (0..r).filter(|&i| perm[i] == usize::MAX) {
            for j in (0..r).filter(|&j| !sub_used[j]) {
                let c = corr[(i, j)].abs();
                if best.map_or(true, |(_, _, b)| c > b) {
                    best = Some((i, j, c));
                }
            }
        }
        let (i, j, _) = best.expect("unassigned pair remains");
        perm[i] = j;
        signs[i] = if corr[(i, j)] < 0.0 { -1.0 } else { 1.0 };
        sub_used[j] = true;
    }
    Ok(Alignment { perm, signs })
}
