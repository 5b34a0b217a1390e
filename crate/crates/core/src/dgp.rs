//! Synthetic weak-factor panels with a factor-augmented forecasting target.
//!
//! The generator builds orthonormal signal factors from the SVD of a Gaussian
//! matrix, scales loadings so that the `k`-th signal eigenvalue is
//! `d_k N^{alpha_k}`, rotates both into the latent basis through an invertible
//! `H`, and adds spatially and serially correlated idiosyncratic errors.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Random stream used throughout the crate.
pub type Stream = ChaCha8Rng;

/// Opens the stream for `seed`.
pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Simulation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    /// Cross-section size.
    #[serde(rename = "N")]
    pub n: usize,
    /// Number of time periods.
    #[serde(rename = "T")]
    pub t: usize,
    /// Number of latent factors.
    pub r: usize,
    /// Number of observed regressors; the last one is the intercept.
    pub p: usize,
    /// Signal exponents, nonincreasing, in (0, 1].
    pub alpha: Vec<f64>,
    /// Signal scales.
    pub d: Vec<f64>,
    /// Rotation from the signal factors to the latent ones, row-major r x r.
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub rho_e: f64,
    pub sigma_e: f64,
    /// Spatial coefficient.
    pub theta: f64,
    /// Order of the rook contiguity matrix.
    pub s_order: usize,
    /// Correlation between observed regressors and the aggregate factor.
    pub rho_fw: f64,
    pub sigma_w: f64,
    pub sigma_eps: f64,
    /// Coefficients on the signal factors.
    pub gamma0: Vec<f64>,
    pub beta: Vec<f64>,
    pub seed: u64,
    /// Drop the idiosyncratic errors entirely (E = 0), for exactness checks.
    #[serde(default)]
    pub noiseless: bool,
}

impl DgpConfig {
    /// Simulation design with r = p = 2 and the reference error structure:
    /// `rho_e = 0.2`, `sigma_e = 0.5`, `theta = 0.5`, `s = 2`,
    /// `sigma_w^2 = 1`, `sigma_eps^2 = 0.5`, `H = [[1, 1/2], [1/2, 2]]`,
    /// `gamma0 = beta = 1`.
    ///
    /// `alpha`/`d` are taken as given; call [`DgpConfig::ordered`] when the
    /// supplied labels do not follow the eigenvalue order.
    pub fn reference_design(size: usize, alpha: [f64; 2], d: [f64; 2], rho_fw: f64, seed: u64) -> Self {
        Self {
            n: size,
            t: size,
            r: 2,
            p: 2,
            alpha: alpha.to_vec(),
            d: d.to_vec(),
            h: vec![vec![1.0, 0.5], vec![0.5, 2.0]],
            rho_e: 0.2,
            sigma_e: 0.5,
            theta: 0.5,
            s_order: 2,
            rho_fw,
            sigma_w: 1.0,
            sigma_eps: 0.5_f64.sqrt(),
            gamma0: vec![1.0; 2],
            beta: vec![1.0; 2],
            seed,
            noiseless: false,
        }
    }

    /// Implied signal eigenvalues `d_k N^{alpha_k}`.
    pub fn signal_eigenvalues(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.alpha
            .iter()
            .zip(&self.d)
            .map(|(a, d)| d * n.powf(*a))
            .collect()
    }

    pub fn h_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.r, self.r, |i, j| self.h[i][j])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("N", "must be positive"));
        }
        if self.t == 0 {
            return Err(Error::config("T", "must be positive"));
        }
        if self.r == 0 || self.r > self.n.min(self.t) {
            return Err(Error::config("r", "must satisfy 1 <= r <= min(N, T)"));
        }
        if self.p == 0 {
            return Err(Error::config("p", "must be positive (the last regressor is the intercept)"));
        }
        if self.alpha.len() != self.r {
            return Err(Error::config("alpha", format!("expected {} entries", self.r)));
        }
        if self.alpha.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::config("alpha", "entries must lie in (0, 1]"));
        }
        if self.alpha.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::config("alpha", "must be nonincreasing"));
        }
        if self.d.len() != self.r {
            return Err(Error::config("d", format!("expected {} entries", self.r)));
        }
        if self.d.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::config("d", "entries must be positive"));
        }
        let lambda = self.signal_eigenvalues();
        if lambda.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::config(
                "d",
                format!("implied eigenvalues d_k N^alpha_k = {lambda:?} are not strictly decreasing"),
            ));
        }
        if self.h.len() != self.r || self.h.iter().any(|row| row.len() != self.r) {
            return Err(Error::config("H", format!("must be {0} x {0}", self.r)));
        }
        let cond = linalg::condition_number(&self.h_matrix());
        if !(cond < linalg::MAX_CONDITION) {
            return Err(Error::config("H", format!("not invertible (condition {cond:e})")));
        }
        if !(0.0..1.0).contains(&self.rho_e) {
            return Err(Error::config("rho_e", "must lie in [0, 1)"));
        }
        if !(self.sigma_e > 0.0) {
            return Err(Error::config("sigma_e", "must be positive"));
        }
        if !self.theta.is_finite() {
            return Err(Error::config("theta", "must be finite"));
        }
        if self.s_order == 0 {
            return Err(Error::config("s_order", "must be positive"));
        }
        if !(self.rho_fw.abs() <= 1.0) {
            return Err(Error::config("rho_fw", "must lie in [-1, 1]"));
        }
        if !(self.sigma_w > 0.0) {
            return Err(Error::config("sigma_w", "must be positive"));
        }
        if !(self.sigma_eps >= 0.0) {
            return Err(Error::config("sigma_eps", "must be nonnegative"));
        }
        if self.gamma0.len() != self.r {
            return Err(Error::config("gamma0", format!("expected {} entries", self.r)));
        }
        if self.beta.len() != self.p {
            return Err(Error::config("beta", format!("expected {} entries", self.p)));
        }
        Ok(())
    }

    /// Relabels the factors so that the implied eigenvalues are decreasing.
    ///
    /// `alpha`, `d`, `gamma0` and the columns of `H` are permuted together, so
    /// the latent factors, the predictors and the response are unchanged in
    /// distribution. `order[k]` is the original label of eigen-position `k`.
    pub fn ordered(&self) -> (DgpConfig, Vec<usize>) {
        let lambda = self.signal_eigenvalues();
        let mut order: Vec<usize> = (0..self.r).collect();
        order.sort_by(|&a, &b| lambda[b].total_cmp(&lambda[a]).then(a.cmp(&b)));
        let mut out = self.clone();
        out.alpha = order.iter().map(|&k| self.alpha[k]).collect();
        out.d = order.iter().map(|&k| self.d[k]).collect();
        out.gamma0 = order.iter().map(|&k| self.gamma0[k]).collect();
        out.h = (0..self.r)
            .map(|i| order.iter().map(|&k| self.h[i][k]).collect())
            .collect();
        (out, order)
    }
}

/// Latent structure behind a simulated panel.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Signal factors, `F0'F0/T = I`.
    pub f0: DMatrix<f64>,
    /// Signal loadings, `B0'B0 = diag(lambda)`.
    pub b0: DMatrix<f64>,
    pub fstar: DMatrix<f64>,
    pub bstar: DMatrix<f64>,
    pub hmat: DMatrix<f64>,
    pub gamma0: DVector<f64>,
    /// `H gamma0`.
    pub gamma_star: DVector<f64>,
    pub beta: DVector<f64>,
    pub e: DMatrix<f64>,
    pub eps: DVector<f64>,
    pub lambda: DVector<f64>,
}

/// Observed panel. Row `t` of `x` and `w` is aligned with the response in `y[t]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub w: DMatrix<f64>,
    pub truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, w: DMatrix<f64>) -> Result<Self> {
        let ds = Self { x, y, w, truth: None };
        ds.check()?;
        Ok(ds)
    }

    pub fn t(&self) -> usize {
        self.x.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn check(&self) -> Result<()> {
        let t = self.x.nrows();
        if self.y.len() != t {
            return Err(Error::DimensionMismatch {
                context: "dataset y",
                expected: t,
                actual: self.y.len(),
            });
        }
        if self.w.nrows() != t {
            return Err(Error::DimensionMismatch {
                context: "dataset W",
                expected: t,
                actual: self.w.nrows(),
            });
        }
        if self.x.iter().chain(self.y.iter()).chain(self.w.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite value in dataset".into()));
        }
        Ok(())
    }
}

/// Correlation matrix of `(I - theta S)(I - theta S)'` for the row-normalized
/// band contiguity matrix `S` with neighbours within `s_order` positions.
pub fn build_spatial_corr(n: usize, s_order: usize, theta: f64) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::config("N", "spatial correlation needs N >= 2"));
    }
    if s_order == 0 {
        return Err(Error::config("s_order", "must be positive"));
    }
    if n < s_order + 1 {
        warn!("contiguity order {s_order} >= N = {n}: every unit neighbours every other");
    }
    let mut s = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let lo = i.saturating_sub(s_order);
        let hi = (i + s_order).min(n - 1);
        let count = (hi - lo) as f64;
        for j in lo..=hi {
            if j != i {
                s[(i, j)] = 1.0 / count;
            }
        }
    }
    let a = DMatrix::<f64>::identity(n, n) - s * theta;
    let m = &a * a.transpose();
    let mut scale = DVector::<f64>::zeros(n);
    for i in 0..n {
        let d = m[(i, i)];
        if !(d > 0.0) {
            return Err(Error::Singular {
                context: "spatial correlation diagonal",
                pivot: i,
            });
        }
        scale[i] = 1.0 / d.sqrt();
    }
    let mut r = DMatrix::from_fn(n, n, |i, j| scale[i] * m[(i, j)] * scale[j]);
    for i in 0..n {
        r[(i, i)] = 1.0;
    }
    Ok(r)
}

/// Signal factors and loadings.
#[derive(Debug, Clone)]
pub struct FactorStructure {
    pub f0: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub fstar: DMatrix<f64>,
    pub bstar: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut Stream) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

fn normal_vector(len: usize, rng: &mut Stream) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

pub fn gen_factor_structure(cfg: &DgpConfig, rng: &mut Stream) -> Result<FactorStructure> {
    cfg.validate()?;
    let (t, n, r) = (cfg.t, cfg.n, cfg.r);

    let mut attempt = 0;
    let (u, v) = loop {
        let a = normal_matrix(t, n, rng);
        let svd = a.svd(true, true);
        let sv = &svd.singular_values;
        let mut order: Vec<usize> = (0..sv.len()).collect();
        order.sort_by(|&x, &y| sv[y].total_cmp(&sv[x]));
        let top = sv[order[0]];
        let tail = sv[order[r - 1]];
        if tail > 1e-10 * top {
            let uu = svd.u.as_ref().expect("requested U");
            let vt = svd.v_t.as_ref().expect("requested V'");
            let u = DMatrix::from_fn(t, r, |i, k| uu[(i, order[k])]);
            let v = DMatrix::from_fn(n, r, |i, k| vt[(order[k], i)]);
            break (u, v);
        }
        attempt += 1;
        if attempt > 1 {
            return Err(Error::RankDeficient {
                requested: r,
                index: r - 1,
                value: tail,
                largest: top,
            });
        }
    };

    let mut u = u;
    let mut v = v;
    let signs = linalg::canonical_column_signs(&mut u);
    for (k, s) in signs.iter().enumerate() {
        if *s < 0.0 {
            v.column_mut(k).neg_mut();
        }
    }

    let lambda = DVector::from_vec(cfg.signal_eigenvalues());
    let f0 = u * (t as f64).sqrt();
    let b0 = v * DMatrix::from_diagonal(&lambda.map(f64::sqrt));

    let h = cfg.h_matrix();
    let hinv = linalg::inverse(&h, "rotation H")?;
    let fstar = &f0 * hinv;
    let bstar = &b0 * h.transpose();
    Ok(FactorStructure {
        f0,
        b0,
        fstar,
        bstar,
        lambda,
    })
}

/// Serially correlated errors: `e_1 ~ N(0, I)`,
/// `e_t = rho e_{t-1} + sqrt(1 - rho^2) Sigma^{1/2} xi_t`.
pub fn gen_errors(cfg: &DgpConfig, sigma_e_half: &DMatrix<f64>, rng: &mut Stream) -> Result<DMatrix<f64>> {
    let (t, n) = (cfg.t, cfg.n);
    if sigma_e_half.nrows() != n || sigma_e_half.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "error covariance root",
            expected: n,
            actual: sigma_e_half.nrows(),
        });
    }
    let mut e = DMatrix::<f64>::zeros(t, n);
    let innov_scale = (1.0 - cfg.rho_e * cfg.rho_e).sqrt();
    let mut prev = normal_vector(n, rng);
    e.row_mut(0).copy_from(&prev.transpose());
    for s in 1..t {
        let xi = normal_vector(n, rng);
        let cur = &prev * cfg.rho_e + sigma_e_half * xi * innov_scale;
        e.row_mut(s).copy_from(&cur.transpose());
        prev = cur;
    }
    Ok(e)
}

/// Observed regressors `W` (last column the intercept), the response and its noise.
pub fn gen_regression(
    cfg: &DgpConfig,
    f0: &DMatrix<f64>,
    rng: &mut Stream,
) -> Result<(DVector<f64>, DMatrix<f64>, DVector<f64>)> {
    if !(cfg.rho_fw.abs() <= 1.0) {
        return Err(Error::config("rho_fw", "must lie in [-1, 1]"));
    }
    let (t, p, r) = (cfg.t, cfg.p, cfg.r);
    if f0.nrows() != t || f0.ncols() != r {
        return Err(Error::DimensionMismatch {
            context: "signal factors",
            expected: t * r,
            actual: f0.nrows() * f0.ncols(),
        });
    }
    let aggregate = f0.column_sum() / (r as f64).sqrt();
    let idio = (1.0 - cfg.rho_fw * cfg.rho_fw).sqrt();
    let mut w = DMatrix::<f64>::zeros(t, p);
    for l in 0..p - 1 {
        for s in 0..t {
            let zeta: f64 = rng.sample(StandardNormal);
            w[(s, l)] = cfg.sigma_w * (cfg.rho_fw * aggregate[s] + idio * zeta);
        }
    }
    w.column_mut(p - 1).fill(1.0);

    let eps = normal_vector(t, rng) * cfg.sigma_eps;
    let gamma0 = DVector::from_column_slice(&cfg.gamma0);
    let beta = DVector::from_column_slice(&cfg.beta);
    let y = f0 * gamma0 + &w * beta + &eps;
    Ok((y, w, eps))
}

/// Draws datasets for a fixed configuration, caching the error covariance root.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: DgpConfig,
    sigma_e_half: DMatrix<f64>,
}

impl Simulator {
    pub fn new(cfg: DgpConfig) -> Result<Self> {
        cfg.validate()?;
        let sigma_e_half = if cfg.n >= 2 {
            let rs = build_spatial_corr(cfg.n, cfg.s_order, cfg.theta)?;
            linalg::sym_sqrt(&(rs * (cfg.sigma_e * cfg.sigma_e)))
        } else {
            DMatrix::from_element(1, 1, cfg.sigma_e)
        };
        Ok(Self { cfg, sigma_e_half })
    }

    pub fn config(&self) -> &DgpConfig {
        &self.cfg
    }

    pub fn sigma_e_half(&self) -> &DMatrix<f64> {
        &self.sigma_e_half
    }

    /// Draws one dataset from the stream seeded with `seed`.
    pub fn draw(&self, seed: u64) -> Result<Dataset> {
        let mut rng = stream(seed);
        self.draw_with(&mut rng)
    }

    pub fn draw_with(&self, rng: &mut Stream) -> Result<Dataset> {
        let cfg = &self.cfg;
        let fs = gen_factor_structure(cfg, rng)?;
        let e = if cfg.noiseless {
            DMatrix::zeros(cfg.t, cfg.n)
        } else {
            gen_errors(cfg, &self.sigma_e_half, rng)?
        };
        let (y, w, eps) = gen_regression(cfg, &fs.f0, rng)?;
        let x = &fs.fstar * fs.bstar.transpose() + &e;

        let hmat = cfg.h_matrix();
        let gamma0 = DVector::from_column_slice(&cfg.gamma0);
        let gamma_star = &hmat * &gamma0;
        let truth = GroundTruth {
            f0: fs.f0,
            b0: fs.b0,
            fstar: fs.fstar,
            bstar: fs.bstar,
            hmat,
            gamma0,
            gamma_star,
            beta: DVector::from_column_slice(&cfg.beta),
            e,
            eps,
            lambda: fs.lambda,
        };
        Ok(Dataset {
            x,
            y,
            w,
            truth: Some(truth),
        })
    }
}

/// One dataset, fully determined by `cfg` (including its seed).
pub fn simulate(cfg: &DgpConfig) -> Result<Dataset> {
    Simulator::new(cfg.clone())?.draw(cfg.seed)
}
