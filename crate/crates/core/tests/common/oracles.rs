//! Independent brute-force oracles. Each check recomputes a library result
//! from first principles with plain loops or nalgebra's own routines.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use facreg::bias::{self, JackknifeBase};
use facreg::covariance::{self, PoetConfig};
use facreg::dgp::{self, DgpConfig, Simulator};
use facreg::factors;
use facreg::mc::{self, ExperimentSpec, PowerSpec, StrengthCell};
use facreg::pipeline::{EstimateOptions, Target};
use facreg::regression::{self, CovKind};
use facreg::rotations;
use facreg::Error;

use super::{close_mat, close_vec, ensure, normal_matrix, Check};

pub const ALL: &[(&str, fn() -> Check)] = &[
    ("spatial correlation 3x3 by hand", spatial_corr_by_hand),
    ("eigenvalue ordering guard", eigen_ordering_guard),
    ("AR(1) lag-1 autocorrelation", ar1_lag_correlation),
    ("regressor-factor correlation", regressor_factor_correlation),
    ("PC normalization vs dense eigen", pc_dense_eigen),
    ("M_w X vs column-wise OLS residuals", project_out_columnwise),
    ("rotation_H recovers configured H", rotation_h_round_trip),
    ("Hhat = H Htilde and Hhat_q = H Htilde_q", tilde_products),
    ("scalar Hhat by hand", scalar_hhat),
    ("noiseless Hhat_q = H up to sign", noiseless_hhat_q),
    ("alignment vs exhaustive 2x2 search", alignment_exhaustive),
    ("OLS vs Gauss-Jordan normal equations", ols_gauss_jordan),
    ("hetero covariance triple sum", hetero_triple_sum),
    ("HAC covariance double sum", hac_double_sum),
    ("HAC ~ hetero for white noise", hac_white_noise),
    ("linear test quadratic form", wald_quadratic_form),
    ("residual matrix by subtraction", residual_subtraction),
    ("POET beats sample covariance", poet_frobenius),
    ("G matrices element-wise", g_elementwise),
    ("analytic corrections expanded", kappa_expanded),
    ("jackknife straight-line reimplementation", jackknife_straight_line),
    ("bcjk power curve symmetry", power_curve_symmetry),
];

// ---------------------------------------------------------------- helpers

/// Gauss-Jordan inverse with partial pivoting.
pub fn gauss_jordan_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = DMatrix::<f64>::identity(n, n);
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs())).unwrap();
        m.swap_rows(c, p);
        inv.swap_rows(c, p);
        let d = m[(c, c)];
        for j in 0..n {
            m[(c, j)] /= d;
            inv[(c, j)] /= d;
        }
        for i in 0..n {
            if i != c {
                let f = m[(i, c)];
                for j in 0..n {
                    m[(i, j)] -= f * m[(c, j)];
                    inv[(i, j)] -= f * inv[(c, j)];
                }
            }
        }
    }
    inv
}

fn ols_normal_equations(y: &DVector<f64>, z: &DMatrix<f64>) -> DVector<f64> {
    gauss_jordan_inverse(&(z.transpose() * z)) * z.transpose() * y
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Top-`r` eigenvectors of `XX'/T` times `sqrt(T)`, via nalgebra.
fn pc_oracle(x: &DMatrix<f64>, r: usize) -> (DMatrix<f64>, Vec<f64>) {
    let t = x.nrows() as f64;
    let eig = SymmetricEigen::new(x * x.transpose() / t);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut f = DMatrix::zeros(x.nrows(), r);
    for k in 0..r {
        f.set_column(k, &(eig.eigenvectors.column(idx[k]) * t.sqrt()));
    }
    (f, idx[..r].iter().map(|&i| eig.eigenvalues[i]).collect())
}

fn small_design(n: usize, t: usize, seed: u64) -> DgpConfig {
    let mut cfg = DgpConfig::reference_design(n, [1.0, 0.8], [0.5, 0.3], 0.5, seed);
    cfg.t = t;
    cfg
}

// ---------------------------------------------------------------- dgp

pub fn spatial_corr_by_hand() -> Check {
    let theta = 0.5;
    // first-order rook neighbours on a line of three, row-normalized
    let s = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.5, 0.0, 0.5, 0.0, 1.0, 0.0]);
    let a = DMatrix::<f64>::identity(3, 3) - s * theta;
    let m = &a * a.transpose();
    let mut oracle = DMatrix::zeros(3, 3);
    for i in 0..3 {
        for j in 0..3 {
            oracle[(i, j)] = m[(i, j)] / (m[(i, i)] * m[(j, j)]).sqrt();
        }
    }
    let got = dgp::build_spatial_corr(3, 1, theta).map_err(|e| e.to_string())?;
    close_mat("R_s", &got, &oracle, 1e-14)?;
    // the (1,2) entry once more, in closed form
    let m11 = 1.0 + theta * theta;
    let m22 = 1.0 + theta * theta * 0.5;
    let m12 = -1.5 * theta;
    let r12 = m12 / (m11 * m22).sqrt();
    ensure((got[(0, 1)] - r12).abs() < 1e-14, || format!("R_12 {} vs {r12}", got[(0, 1)]))
}

pub fn eigen_ordering_guard() -> Check {
    let cfg = DgpConfig::reference_design(50, [1.0, 1.0], [0.05, 0.2], 0.0, 1);
    match cfg.validate() {
        Err(Error::InvalidConfig { field, .. }) if field == "d" => {}
        other => return Err(format!("expected an invalid `d`, got {other:?}")),
    }
    let (ordered, order) = cfg.ordered();
    ordered.validate().map_err(|e| e.to_string())?;
    ensure(order == vec![1, 0], || format!("order {order:?}"))?;
    let lam = ordered.signal_eigenvalues();
    ensure((lam[0] - 10.0).abs() < 1e-12 && (lam[1] - 2.5).abs() < 1e-12, || format!("lambda {lam:?}"))
}

pub fn ar1_lag_correlation() -> Check {
    let mut cfg = small_design(1, 10_000, 0);
    cfg.rho_e = 0.2;
    let half = DMatrix::from_element(1, 1, 1.0);
    let mut rng = dgp::stream(17);
    let e = dgp::gen_errors(&cfg, &half, &mut rng).map_err(|e| e.to_string())?;
    let v: Vec<f64> = e.column(0).iter().copied().collect();
    let rho = corr(&v[2..], &v[1..v.len() - 1]);
    ensure((rho - 0.2).abs() < 0.02, || format!("lag-1 autocorrelation {rho}"))
}

pub fn regressor_factor_correlation() -> Check {
    let mut cfg = small_design(5, 10_000, 0);
    cfg.rho_fw = 0.6;
    let mut rng = dgp::stream(23);
    let fs = dgp::gen_factor_structure(&cfg, &mut rng).map_err(|e| e.to_string())?;
    let (_, w, _) = dgp::gen_regression(&cfg, &fs.f0, &mut rng).map_err(|e| e.to_string())?;
    let g: Vec<f64> = (0..cfg.t).map(|t| (fs.f0[(t, 0)] + fs.f0[(t, 1)]) / 2f64.sqrt()).collect();
    let w1: Vec<f64> = w.column(0).iter().copied().collect();
    let c = corr(&w1, &g);
    ensure((c - 0.6).abs() < 0.02, || format!("corr {c}"))
}

// ---------------------------------------------------------------- factors

pub fn pc_dense_eigen() -> Check {
    let x = normal_matrix(6, 4, 5);
    let pc = factors::extract_factors(&x, 2).map_err(|e| e.to_string())?;
    let btb = pc.bhat.transpose() * &pc.bhat;
    ensure(btb[(0, 1)].abs() < 1e-10, || format!("off-diagonal {}", btb[(0, 1)]))?;
    // the nonzero spectrum of X'X/T equals that of XX'/T
    let eig_n = SymmetricEigen::new(x.transpose() * &x / 6.0);
    let mut vals: Vec<f64> = eig_n.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    for k in 0..2 {
        ensure((btb[(k, k)] - vals[k]).abs() < 1e-10, || format!("B'B[{k}] {} vs {}", btb[(k, k)], vals[k]))?;
        ensure((pc.lambda_hat[k] - vals[k]).abs() < 1e-10, || format!("lambda[{k}]"))?;
    }
    let (f, _) = pc_oracle(&x, 2);
    for k in 0..2 {
        let dot = pc.fhat.column(k).dot(&f.column(k)) / 6.0;
        ensure((dot.abs() - 1.0).abs() < 1e-10, || format!("column {k} overlap {dot}"))?;
    }
    close_mat("F'F/T", &(pc.fhat.transpose() * &pc.fhat / 6.0), &DMatrix::identity(2, 2), 1e-10)
}

pub fn project_out_columnwise() -> Check {
    let t = 7;
    let x = normal_matrix(t, 3, 8);
    let mut w = DMatrix::zeros(t, 1);
    w[(0, 0)] = 1.0;
    let xw = factors::project_out(&x, &w).map_err(|e| e.to_string())?;
    for j in 0..3 {
        ensure(xw[(0, j)].abs() < 1e-14, || format!("row 0, column {j} not zeroed"))?;
    }
    let w2 = hcat(&normal_matrix(t, 1, 9), &DMatrix::from_element(t, 1, 1.0));
    let xw2 = factors::project_out(&x, &w2).map_err(|e| e.to_string())?;
    for j in 0..3 {
        let xj = x.column(j).into_owned();
        let b = ols_normal_equations(&xj, &w2);
        let resid = &xj - &w2 * b;
        close_vec(&format!("column {j}"), &xw2.column(j).into_owned(), &resid, 1e-12)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- rotations

pub fn rotation_h_round_trip() -> Check {
    let mut cfg = small_design(40, 40, 3);
    cfg.rho_fw = 0.0;
    let ds = dgp::simulate(&cfg).map_err(|e| e.to_string())?;
    let tr = ds.truth.as_ref().unwrap();
    let h = rotations::rotation_h(&tr.fstar, &tr.bstar).map_err(|e| e.to_string())?;
    close_mat("H", &h, &cfg.h_matrix(), 1e-8)
}

pub fn tilde_products() -> Check {
    let ds = dgp::simulate(&small_design(30, 25, 4)).map_err(|e| e.to_string())?;
    let tr = ds.truth.as_ref().unwrap();
    let pc = factors::extract_factors(&ds.x, 2).map_err(|e| e.to_string())?;
    let hhat = rotations::rotation_hhat(&tr.fstar, &tr.bstar, &pc).map_err(|e| e.to_string())?;
    let hq = rotations::rotation_hhat_q(&tr.fstar, &pc).map_err(|e| e.to_string())?;
    let tl = rotations::tilde_rotations(tr, &pc).map_err(|e| e.to_string())?;
    close_mat("Hhat", &hhat, &(&tr.hmat * &tl.h_tilde), 1e-10)?;
    close_mat("Hhat_q", &hq, &(&tr.hmat * &tl.h_tilde_q), 1e-10)
}

pub fn scalar_hhat() -> Check {
    let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -0.5, 1.5, 2.0, 0.0]);
    let fstar = DMatrix::from_column_slice(3, 1, &[0.7, -0.2, 1.1]);
    let bstar = DMatrix::from_column_slice(2, 1, &[0.4, 1.3]);
    let pc = factors::extract_factors(&x, 1).map_err(|e| e.to_string())?;
    let bb = 0.4 * 0.4 + 1.3 * 1.3;
    let fphat = (0.7 * pc.fhat[(0, 0)] - 0.2 * pc.fhat[(1, 0)] + 1.1 * pc.fhat[(2, 0)]) / 3.0;
    let oracle = bb * fphat / pc.lambda_hat[0];
    let got = rotations::rotation_hhat(&fstar, &bstar, &pc).map_err(|e| e.to_string())?;
    ensure((got[(0, 0)] - oracle).abs() < 1e-12, || format!("{} vs {oracle}", got[(0, 0)]))
}

pub fn noiseless_hhat_q() -> Check {
    let mut cfg = small_design(30, 30, 6);
    cfg.noiseless = true;
    let ds = dgp::simulate(&cfg).map_err(|e| e.to_string())?;
    let tr = ds.truth.as_ref().unwrap();
    let pc = factors::extract_factors(&ds.x, 2).map_err(|e| e.to_string())?;
    let hq = rotations::rotation_hhat_q(&tr.fstar, &pc).map_err(|e| e.to_string())?;
    let h = rotations::rotation_h(&tr.fstar, &tr.bstar).map_err(|e| e.to_string())?;
    for k in 0..2 {
        let s = if hq.column(k).dot(&h.column(k)) < 0.0 { -1.0 } else { 1.0 };
        let d = (hq.column(k) * s - h.column(k)).abs().max();
        ensure(d < 1e-8, || format!("column {k} differs by {d:e}"))?;
    }
    Ok(())
}

pub fn alignment_exhaustive() -> Check {
    let f_ref = normal_matrix(50, 2, 10);
    for (swap, s0, s1) in [(false, 1.0, -1.0), (true, 1.0, 1.0), (true, -1.0, 1.0), (false, -1.0, -1.0)] {
        let mut sub = DMatrix::zeros(50, 2);
        let (c0, c1) = if swap { (1, 0) } else { (0, 1) };
        sub.set_column(c0, &(f_ref.column(0) * s0 + normal_matrix(50, 1, 11).column(0) * 0.1));
        sub.set_column(c1, &(f_ref.column(1) * s1));
        // exhaustive: the assignment with the largest total |correlation|
        let col = |m: &DMatrix<f64>, j: usize| m.column(j).iter().copied().collect::<Vec<_>>();
        let c = |i: usize, j: usize| corr(&col(&f_ref, i), &col(&sub, j));
        let keep = c(0, 0).abs() + c(1, 1).abs();
        let cross = c(0, 1).abs() + c(1, 0).abs();
        let perm = if keep >= cross { vec![0, 1] } else { vec![1, 0] };
        let signs: Vec<f64> = (0..2).map(|k| c(k, perm[k]).signum()).collect();
        let a = rotations::align_factors(&f_ref, &sub).map_err(|e| e.to_string())?;
        ensure(a.perm == perm && a.signs == signs, || {
            format!("got {:?} {:?}, exhaustive {perm:?} {signs:?}", a.perm, a.signs)
        })?;
    }
    Ok(())
}

// ---------------------------------------------------------------- regression

fn toy(t: usize, seed: u64) -> (regression::AugmentedFit, DMatrix<f64>) {
    let f = normal_matrix(t, 1, seed);
    let w = hcat(&normal_matrix(t, 1, seed + 1), &DMatrix::from_element(t, 1, 1.0));
    let y = normal_matrix(t, 1, seed + 2).column(0).into_owned();
    let fit = regression::ols_augmented(&y, &f, &w).unwrap();
    (fit, hcat(&f, &w))
}

pub fn ols_gauss_jordan() -> Check {
    let z = normal_matrix(20, 4, 12);
    let y = normal_matrix(20, 1, 13).column(0).into_owned();
    let fit = regression::ols_augmented(&y, &z.columns(0, 2).into_owned(), &z.columns(2, 2).into_owned())
        .map_err(|e| e.to_string())?;
    close_vec("delta", &fit.delta_hat, &ols_normal_equations(&y, &z), 1e-10)
}

pub fn hetero_triple_sum() -> Check {
    let (fit, z) = toy(5, 14);
    let t = 5;
    let k = z.ncols();
    let a = gauss_jordan_inverse(&(z.transpose() * &z));
    let mut oracle = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let mut acc = 0.0;
            for s in 0..t {
                for l in 0..k {
                    for m in 0..k {
                        acc += a[(i, l)] * z[(s, l)] * fit.resid[s] * fit.resid[s] * z[(s, m)] * a[(m, j)];
                    }
                }
            }
            oracle[(i, j)] = acc;
        }
    }
    let got = regression::cov_sandwich_hetero(&fit, &z).map_err(|e| e.to_string())?;
    close_mat("hetero", &got, &oracle, 1e-12)
}

pub fn hac_double_sum() -> Check {
    let (fit, z) = toy(6, 15);
    let (t, k) = (6usize, z.ncols());
    let mut omega = DMatrix::zeros(k, k);
    for s in 0..t {
        for u in 0..t {
            let wgt = match s.abs_diff(u) {
                0 => 1.0,
                1 => 0.5,
                _ => 0.0,
            };
            for i in 0..k {
                for j in 0..k {
                    omega[(i, j)] += wgt * z[(s, i)] * fit.resid[s] * fit.resid[u] * z[(u, j)];
                }
            }
        }
    }
    let a = gauss_jordan_inverse(&(z.transpose() * &z));
    let oracle = &a * omega * &a;
    let got = regression::cov_hac(&fit, &z, 1).map_err(|e| e.to_string())?;
    close_mat("HAC", &got, &oracle, 1e-12)
}

pub fn hac_white_noise() -> Check {
    let (fit, z) = toy(5000, 16);
    let a = regression::cov_hac(&fit, &z, regression::default_bandwidth(5000)).map_err(|e| e.to_string())?;
    let b = regression::cov_sandwich_hetero(&fit, &z).map_err(|e| e.to_string())?;
    for i in 0..z.ncols() {
        let ratio = a[(i, i)] / b[(i, i)];
        ensure((ratio - 1.0).abs() < 0.1, || format!("diag {i} ratio {ratio}"))?;
    }
    Ok(())
}

pub fn wald_quadratic_form() -> Check {
    let (fit, z) = toy(30, 17);
    let fit = fit.with_cov(&z, CovKind::Heteroskedastic).map_err(|e| e.to_string())?;
    let cov = fit.cov_delta.clone().unwrap();
    let a = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let mut q = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            q += a[i] * cov[(i, j)] * a[j];
        }
    }
    let num = a[0] * fit.delta_hat[0] + a[1] * fit.delta_hat[1] + a[2] * fit.delta_hat[2] - 0.3;
    let oracle = num / q.sqrt();
    let got = regression::wald_linear(&fit, &a, 0.3).map_err(|e| e.to_string())?;
    ensure((got.stat - oracle).abs() < 1e-12, || format!("{} vs {oracle}", got.stat))?;
    ensure(got.reject_5pct == (oracle.abs() > 1.96), || "rejection flag".into())
}

// ---------------------------------------------------------------- covariance

pub fn residual_subtraction() -> Check {
    let x = DMatrix::from_row_slice(4, 3, &[1.0, 0.5, -1.0, 2.0, 1.0, 0.0, -1.0, 0.3, 0.7, 0.4, -0.2, 1.5]);
    let pc = factors::extract_factors(&x, 1).map_err(|e| e.to_string())?;
    let mut oracle = DMatrix::zeros(4, 3);
    for t in 0..4 {
        for i in 0..3 {
            oracle[(t, i)] = x[(t, i)] - pc.fhat[(t, 0)] * pc.bhat[(i, 0)];
        }
    }
    let got = covariance::residual_matrix(&x, &pc).map_err(|e| e.to_string())?;
    close_mat("Ehat", &got, &oracle, 1e-14)
}

pub fn poet_frobenius() -> Check {
    let mut cfg = DgpConfig::reference_design(200, [1.0, 0.8], [0.2, 0.2], 0.0, 7);
    cfg.rho_e = 0.0;
    let sim = Simulator::new(cfg.clone()).map_err(|e| e.to_string())?;
    let ds = sim.draw(7).map_err(|e| e.to_string())?;
    let truth = dgp::build_spatial_corr(200, cfg.s_order, cfg.theta).map_err(|e| e.to_string())?
        * (cfg.sigma_e * cfg.sigma_e);
    let pc = factors::extract_factors(&ds.x, 2).map_err(|e| e.to_string())?;
    let e = covariance::residual_matrix(&ds.x, &pc).map_err(|e| e.to_string())?;
    let s = e.transpose() * &e / 200.0;
    let poet = covariance::poet_cov(
        &e,
        &PoetConfig {
            threshold_const: 0.5,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let (ep, es) = ((&poet - &truth).norm(), (&s - &truth).norm());
    ensure(ep < es, || format!("POET error {ep} not below sample error {es}"))
}

// ---------------------------------------------------------------- bias

fn spd(n: usize, seed: u64) -> DMatrix<f64> {
    let a = normal_matrix(n, n, seed);
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1
}

pub fn g_elementwise() -> Check {
    let n = 6;
    let b = normal_matrix(n, 2, 18);
    let s = spd(n, 19);
    let (g, gbar) = bias::g_matrices(&b, &s).map_err(|e| e.to_string())?;
    // M = B'SB and P = (B'B)^{-1} by element sums
    let mut m = DMatrix::<f64>::zeros(2, 2);
    let mut btb = DMatrix::<f64>::zeros(2, 2);
    for k in 0..2 {
        for l in 0..2 {
            for i in 0..n {
                btb[(k, l)] += b[(i, k)] * b[(i, l)];
                for j in 0..n {
                    m[(k, l)] += b[(i, k)] * s[(i, j)] * b[(j, l)];
                }
            }
        }
    }
    let det = btb[(0, 0)] * btb[(1, 1)] - btb[(0, 1)] * btb[(1, 0)];
    let p = DMatrix::from_row_slice(2, 2, &[btb[(1, 1)], -btb[(0, 1)], -btb[(1, 0)], btb[(0, 0)]]) / det;
    let mut g_o = DMatrix::<f64>::zeros(2, 2);
    let mut gbar_o = DMatrix::<f64>::zeros(2, 2);
    for i in 0..2 {
        for j in 0..2 {
            for a in 0..2 {
                for c in 0..2 {
                    g_o[(i, j)] += m[(i, a)] * p[(a, c)] * p[(c, j)];
                    gbar_o[(i, j)] += p[(i, a)] * m[(a, c)] * p[(c, j)];
                }
            }
        }
    }
    close_mat("G", &g, &g_o, 1e-12)?;
    close_mat("Gbar", &gbar, &gbar_o, 1e-12)
}

pub fn kappa_expanded() -> Check {
    let ds = dgp::simulate(&small_design(12, 30, 20)).map_err(|e| e.to_string())?;
    let pc = factors::extract_factors(&ds.x, 2).map_err(|e| e.to_string())?;
    let fit = regression::ols_augmented(&ds.y, &pc.fhat, &ds.w).map_err(|e| e.to_string())?;
    let s = spd(12, 21);
    let got = bias::analytic_bc(&fit, &pc, &ds.w, &s).map_err(|e| e.to_string())?;

    let t = 30.0;
    let z = hcat(&pc.fhat, &ds.w);
    let a = gauss_jordan_inverse(&(z.transpose() * &z / t));
    let btb_inv = gauss_jordan_inverse(&(pc.bhat.transpose() * &pc.bhat));
    let m = pc.bhat.transpose() * &s * &pc.bhat;
    let g = &m * &btb_inv * &btb_inv;
    let gbar = &btb_inv * &m * &btb_inv;
    let gamma = fit.delta_hat.rows(0, 2).into_owned();
    let wf = ds.w.transpose() * &pc.fhat / t;
    let mut top = DVector::zeros(4);
    top.rows_mut(0, 2).copy_from(&((&g + &gbar) * &gamma));
    top.rows_mut(2, 2).copy_from(&(&wf * &g * &gamma));
    let kappa = -(&a * top);
    let mut bottom = DVector::zeros(4);
    bottom.rows_mut(2, 2).copy_from(&(&wf * &gbar * &gamma));
    let kappa_bar = &a * bottom;
    let scale = fit.delta_hat.abs().max();
    close_vec("kappa", &got.kappa_hat, &kappa, 1e-12 * scale)?;
    close_vec("kappa_bar", &got.kappa_bar_hat, &kappa_bar, 1e-12 * scale)?;
    close_vec("bcHhat", &got.delta_bc_hhat, &(&fit.delta_hat - kappa), 1e-12 * scale)?;
    close_vec("bcHhatq", &got.delta_bc_hhat_q, &(&fit.delta_hat - kappa_bar), 1e-12 * scale)
}

pub fn jackknife_straight_line() -> Check {
    let mut cfg = small_design(8, 40, 22);
    cfg.r = 1;
    cfg.alpha = vec![1.0];
    cfg.d = vec![0.8];
    cfg.h = vec![vec![1.5]];
    cfg.gamma0 = vec![1.0];
    let ds = dgp::simulate(&cfg).map_err(|e| e.to_string())?;
    let (x, y, w) = (&ds.x, &ds.y, &ds.w);
    let perms = vec![
        vec![0, 1, 2, 3, 4, 5, 6, 7],
        vec![7, 2, 5, 0, 3, 6, 1, 4],
        vec![3, 1, 6, 4, 0, 7, 5, 2],
    ];

    let (f_full, _) = pc_oracle(x, 1);
    let delta_full = ols_normal_equations(y, &hcat(&f_full, w));
    let mut acc = DVector::zeros(delta_full.len());
    for perm in &perms {
        for half in [&perm[..4], &perm[4..]] {
            let xs = DMatrix::from_fn(40, 4, |t, j| x[(t, half[j])]);
            let (mut fh, _) = pc_oracle(&xs, 1);
            let a: Vec<f64> = f_full.column(0).iter().copied().collect();
            let b: Vec<f64> = fh.column(0).iter().copied().collect();
            if corr(&a, &b) < 0.0 {
                fh.neg_mut();
            }
            acc += ols_normal_equations(y, &hcat(&fh, w)) * 0.5;
        }
    }
    let oracle = &delta_full * 2.0 - acc / perms.len() as f64;

    let base = JackknifeBase {
        x,
        y,
        w,
        fhat: &f_full,
        delta_hat: &delta_full,
    };
    let got = bias::jackknife_with_permutations(&base, &perms).map_err(|e| e.to_string())?;
    close_vec("bcjk", &got, &oracle, 1e-9)
}

// ---------------------------------------------------------------- harness

pub fn power_curve_symmetry() -> Check {
    let grid = vec![-0.3, -0.15, 0.0, 0.15, 0.3];
    let spec = ExperimentSpec {
        sizes: vec![50],
        cells: vec![StrengthCell {
            alpha: vec![1.0, 0.8],
            d: vec![0.2, 0.2],
        }],
        rho_fw: vec![0.0],
        nrep: 300,
        estimators: vec!["bcjk".into()],
        targets: Target::ALL.to_vec(),
        use_mw: false,
        design: Default::default(),
        options: EstimateOptions {
            jk_splits: 20,
            ..Default::default()
        },
        power: Some(PowerSpec {
            coefficient: "beta1".into(),
            grid: grid.clone(),
        }),
        seed: 91,
    };
    let rows = mc::run_power_curve(&spec).map_err(|e| e.to_string())?;
    let at = |v: f64| rows.iter().find(|r| r.value == v).unwrap();
    ensure((at(0.0).reject_size_adjusted - 0.05).abs() <= 1.0 / 300.0 + 1e-12, || {
        format!("size-adjusted null rejection {}", at(0.0).reject_size_adjusted)
    })?;
    for g in [0.15, 0.3] {
        let (p, m) = (at(g).reject_size_adjusted, at(-g).reject_size_adjusted);
        let se = ((p * (1.0 - p) + m * (1.0 - m)) / 300.0).sqrt().max(1.0 / 300.0);
        let z = (p - m).abs() / se;
        ensure(z < 3.0, || format!("asymmetry at +-{g}: {p} vs {m} (z = {z:.2})"))?;
    }
    Ok(())
}
