//! Exact algebraic identities checked on simulated datasets.

use nalgebra::{DMatrix, DVector};

use facreg::bias;
use facreg::dgp::{self, Dataset, DgpConfig};
use facreg::factors;
use facreg::pipeline::{self, EstimateOptions};
use facreg::regression;
use facreg::rotations;

use super::{close_mat, ensure, Check};

fn err(e: facreg::Error) -> String {
    e.to_string()
}

fn scale(m: &DMatrix<f64>) -> f64 {
    m.abs().max().max(1.0)
}

/// PC normalizations, the first-order condition behind `Hhat_q`, the tilde
/// identities and the no-op property of the analytic corrections.
pub fn dataset_invariants(ds: &Dataset, r: usize) -> Check {
    let t = ds.t() as f64;
    let tr = ds.truth.as_ref().ok_or("dataset has no truth")?;
    let pc = factors::extract_factors(&ds.x, r).map_err(err)?;
    let eye = DMatrix::identity(r, r);
    close_mat("F'F/T", &(pc.fhat.transpose() * &pc.fhat / t), &eye, 1e-10)?;

    let btb = pc.bhat.transpose() * &pc.bhat;
    let off = (0..r)
        .flat_map(|i| (0..r).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| btb[(i, j)].abs())
        .fold(0.0, f64::max);
    ensure(off <= 1e-10 * scale(&btb), || format!("B'B off-diagonal {off:e}"))?;

    let hq = rotations::rotation_hhat_q(&tr.fstar, &pc).map_err(err)?;
    let foc = pc.fhat.transpose() * (&pc.fhat - &tr.fstar * &hq) / t;
    ensure(foc.abs().max() < 1e-8, || format!("F'(F - F* Hq)/T = {:e}", foc.abs().max()))?;

    let hhat = rotations::rotation_hhat(&tr.fstar, &tr.bstar, &pc).map_err(err)?;
    let tl = rotations::tilde_rotations(tr, &pc).map_err(err)?;
    close_mat("Hhat vs H Htilde", &hhat, &(&tr.hmat * &tl.h_tilde), 1e-10 * scale(&hhat))?;
    close_mat("Hhat_q vs H Htilde_q", &hq, &(&tr.hmat * &tl.h_tilde_q), 1e-10 * scale(&hq))?;

    let mut fit = regression::ols_augmented(&ds.y, &pc.fhat, &ds.w).map_err(err)?;
    fit.delta_hat.rows_mut(0, r).fill(0.0);
    let n = ds.n();
    let sigma = DMatrix::<f64>::identity(n, n) * 0.3 + DMatrix::from_element(n, n, 0.01);
    let bc = bias::analytic_bc(&fit, &pc, &ds.w, &sigma).map_err(err)?;
    ensure(bc.kappa_hat.iter().all(|v| *v == 0.0), || format!("kappa {}", bc.kappa_hat))?;
    ensure(bc.kappa_bar_hat.iter().all(|v| *v == 0.0), || format!("kappa_bar {}", bc.kappa_bar_hat))?;
    ensure(bc.delta_bc_hhat == fit.delta_hat && bc.delta_bc_hhat_q == fit.delta_hat, || {
        "corrected vectors differ from delta_hat".into()
    })
}

/// With `E = 0` and `sigma_eps = 0` the PC step recovers `F0` and the LS
/// fit recovers `delta0`.
pub fn noiseless_recovery(cfg: &DgpConfig) -> Check {
    let mut cfg = cfg.clone();
    cfg.noiseless = true;
    cfg.sigma_eps = 0.0;
    let (cfg, _) = cfg.ordered();
    let ds = dgp::simulate(&cfg).map_err(err)?;
    let tr = ds.truth.as_ref().unwrap();
    let pc = factors::extract_factors(&ds.x, cfg.r).map_err(err)?;
    let a = rotations::align_factors(&tr.f0, &pc.fhat).map_err(err)?;
    ensure(a.perm.iter().enumerate().all(|(k, &j)| k == j), || format!("permutation {:?}", a.perm))?;
    let f = a.apply(&pc.fhat);
    close_mat("Fhat vs F0", &f, &tr.f0, 1e-8)?;
    let lam = DMatrix::from_column_slice(cfg.r, 1, pc.lambda_hat.as_slice());
    let lam0 = DMatrix::from_column_slice(cfg.r, 1, tr.lambda.as_slice());
    close_mat("Lambdahat", &lam, &lam0, 1e-8 * scale(&lam0))?;
    let fit = regression::ols_augmented(&ds.y, &f, &ds.w).map_err(err)?;
    let mut d0 = DVector::zeros(cfg.r + cfg.p);
    d0.rows_mut(0, cfg.r).copy_from(&tr.gamma0);
    d0.rows_mut(cfg.r, cfg.p).copy_from(&tr.beta);
    let dev = (&fit.delta_hat - &d0).abs().max();
    ensure(dev < 1e-8, || format!("delta_hat - delta0 = {dev:e}"))
}

/// Factors from `M_w X` are orthogonal to `W` and `kappa_bar` vanishes.
pub fn mw_exactness(ds: &Dataset, r: usize) -> Check {
    let opts = EstimateOptions {
        use_mw: true,
        ..Default::default()
    };
    let est = pipeline::estimate_all(ds, r, &opts, false).map_err(err)?;
    let wf = ds.w.transpose() * &est.pc.fhat / ds.t() as f64;
    ensure(wf.abs().max() < 1e-8, || format!("W'F_w/T = {:e}", wf.abs().max()))?;
    let kb = est.bc.kappa_bar_hat.abs().max();
    // zero up to the round-off left in W'F_w
    ensure(kb < 1e-12 * est.bc.delta_hat.abs().max().max(1.0), || format!("kappa_bar {kb:e}"))
}
