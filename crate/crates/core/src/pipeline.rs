//! End-to-end estimation on one dataset: factors, LS fit, corrections and,
//! when the ground truth is known, the pseudo-true targets.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bias::{self, AnalyticCorrection, JackknifeBase, JackknifeMeta};
use crate::covariance::{self, PoetConfig};
use crate::dgp::{Dataset, GroundTruth};
use crate::error::{Error, Result};
use crate::factors::{self, PcEstimate};
use crate::linalg;
use crate::regression::{self, AugmentedFit, CovKind};
use crate::rotations::{self, RotationSet};

/// Splits used by the jackknife unless overridden.
pub const DEFAULT_JK_SPLITS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateOptions {
    pub poet: PoetConfig,
    /// Number of random splits `R`.
    pub jk_splits: usize,
    pub jk_seed: u64,
    /// Extract factors from `M_w X` instead of `X`.
    pub use_mw: bool,
    pub cov_kind: CovKind,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            poet: PoetConfig::default(),
            jk_splits: DEFAULT_JK_SPLITS,
            jk_seed: 0,
            use_mw: false,
            cov_kind: CovKind::Heteroskedastic,
        }
    }
}

/// Comparison targets for simulated data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "delta0")]
    Delta0,
    #[serde(rename = "delta_Hhat")]
    DeltaHhat,
    #[serde(rename = "delta_Hhatq")]
    DeltaHhatQ,
    /// The observed-regressor block only.
    #[serde(rename = "beta")]
    Beta,
}

impl Target {
    pub const ALL: [Target; 4] = [Target::Delta0, Target::DeltaHhat, Target::DeltaHhatQ, Target::Beta];

    pub fn name(&self) -> &'static str {
        match self {
            Target::Delta0 => "delta0",
            Target::DeltaHhat => "delta_Hhat",
            Target::DeltaHhatQ => "delta_Hhatq",
            Target::Beta => "beta",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::config("targets", format!("unknown target '{s}'")))
    }
}

/// Pseudo-true coefficient vectors, each `(gamma', beta')'` except `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub delta0: DVector<f64>,
    pub delta_hhat: DVector<f64>,
    pub delta_hhat_q: DVector<f64>,
    pub beta: DVector<f64>,
}

impl Targets {
    pub fn get(&self, target: Target) -> &DVector<f64> {
        match target {
            Target::Delta0 => &self.delta0,
            Target::DeltaHhat => &self.delta_hhat,
            Target::DeltaHhatQ => &self.delta_hhat_q,
            Target::Beta => &self.beta,
        }
    }
}

fn stack(gamma: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(gamma.len() + beta.len());
    out.rows_mut(0, gamma.len()).copy_from(gamma);
    out.rows_mut(gamma.len(), beta.len()).copy_from(beta);
    out
}

/// Rotations and targets. With `use_mw` the latent factors are replaced by
/// `M_w F*` and the regressor coefficients by `(W'W)^{-1} W'F* gamma* + beta`.
pub fn compute_targets(
    truth: &GroundTruth,
    w: &DMatrix<f64>,
    pc: &PcEstimate,
    use_mw: bool,
) -> Result<(RotationSet, Targets)> {
    let (fstar, beta) = if use_mw {
        let fw = factors::project_out(&truth.fstar, w)?;
        let qr = linalg::CheckedQr::new(w, "observed regressors W")?;
        let shift = qr.solve_vec(&(&truth.fstar * &truth.gamma_star));
        (fw, shift + &truth.beta)
    } else {
        (truth.fstar.clone(), truth.beta.clone())
    };
    let rot = RotationSet::compute(&fstar, &truth.bstar, &truth.gamma_star, pc)?;
    let targets = Targets {
        delta0: stack(&rot.gamma0, &beta),
        delta_hhat: stack(&rot.gamma_hhat, &beta),
        delta_hhat_q: stack(&rot.gamma_hhat_q, &beta),
        beta,
    };
    Ok((rot, targets))
}

/// All estimates for one dataset.
#[derive(Debug, Clone)]
pub struct BiasCorrectedSet {
    pub delta_hat: DVector<f64>,
    pub delta_bc_hhat: DVector<f64>,
    pub delta_bc_hhat_q: DVector<f64>,
    pub delta_bcjk: Option<DVector<f64>>,
    pub kappa_hat: DVector<f64>,
    pub kappa_bar_hat: DVector<f64>,
    pub jk_meta: Option<JackknifeMeta>,
}

/// Lazily evaluated estimation state shared by the estimator registry.
pub struct EstimationContext<'a> {
    pub dataset: &'a Dataset,
    pub options: &'a EstimateOptions,
    /// The panel factors were extracted from (`X` or `M_w X`).
    pub panel: DMatrix<f64>,
    pub pc: PcEstimate,
    /// LS fit with the configured covariance attached.
    pub fit: AugmentedFit,
    pub z: DMatrix<f64>,
    analytic: Option<AnalyticCorrection>,
    sigma_e: Option<DMatrix<f64>>,
    jackknife: Option<(DVector<f64>, JackknifeMeta)>,
}

impl<'a> EstimationContext<'a> {
    pub fn new(dataset: &'a Dataset, r: usize, options: &'a EstimateOptions) -> Result<Self> {
        dataset.check()?;
        options.poet.validate()?;
        let panel = if options.use_mw {
            factors::project_out(&dataset.x, &dataset.w)?
        } else {
            dataset.x.clone()
        };
        let pc = factors::extract_factors(&panel, r)?;
        Self::from_pc(dataset, options, panel, pc)
    }

    /// Like [`EstimationContext::new`], with the PC columns reordered and
    /// re-signed to match the simulated `F0`. Every estimator and target is
    /// equivariant under this, so only the reporting labels change.
    pub fn aligned_to_truth(dataset: &'a Dataset, r: usize, options: &'a EstimateOptions) -> Result<Self> {
        let ctx = Self::new(dataset, r, options)?;
        let Some(truth) = &dataset.truth else {
            return Ok(ctx);
        };
        let a = rotations::align_factors(&truth.f0, &ctx.pc.fhat)?;
        if a.perm.iter().enumerate().all(|(k, &j)| k == j) && a.signs.iter().all(|s| *s > 0.0) {
            return Ok(ctx);
        }
        let pc = a.apply_pc(&ctx.pc);
        Self::from_pc(dataset, options, ctx.panel, pc)
    }

    fn from_pc(dataset: &'a Dataset, options: &'a EstimateOptions, panel: DMatrix<f64>, pc: PcEstimate) -> Result<Self> {
        let z = regression::design(&pc.fhat, &dataset.w);
        let fit = regression::ols_augmented(&dataset.y, &pc.fhat, &dataset.w)?.with_cov(&z, options.cov_kind)?;
        Ok(Self {
            dataset,
            options,
            panel,
            pc,
            fit,
            z,
            analytic: None,
            sigma_e: None,
            jackknife: None,
        })
    }

    pub fn sigma_e(&mut self) -> Result<&DMatrix<f64>> {
        if self.sigma_e.is_none() {
            let e = covariance::residual_matrix(&self.panel, &self.pc)?;
            self.sigma_e = Some(covariance::poet_cov(&e, &self.options.poet)?);
        }
        Ok(self.sigma_e.as_ref().unwrap())
    }

    pub fn analytic(&mut self) -> Result<&AnalyticCorrection> {
        if self.analytic.is_none() {
            self.sigma_e()?;
            let sigma = self.sigma_e.as_ref().unwrap();
            self.analytic = Some(bias::analytic_bc(&self.fit, &self.pc, &self.dataset.w, sigma)?);
        }
        Ok(self.analytic.as_ref().unwrap())
    }

    pub fn jackknife(&mut self) -> Result<&(DVector<f64>, JackknifeMeta)> {
        if self.jackknife.is_none() {
            let base = JackknifeBase {
                x: &self.panel,
                y: &self.dataset.y,
                w: &self.dataset.w,
                fhat: &self.pc.fhat,
                delta_hat: &self.fit.delta_hat,
            };
            self.jackknife = Some(bias::jackknife_bc(&base, self.options.jk_splits, self.options.jk_seed)?);
        }
        Ok(self.jackknife.as_ref().unwrap())
    }

    /// Rotations and targets, when the dataset carries its ground truth.
    pub fn targets(&self) -> Result<Option<(RotationSet, Targets)>> {
        match &self.dataset.truth {
            Some(truth) => compute_targets(truth, &self.dataset.w, &self.pc, self.options.use_mw).map(Some),
            None => Ok(None),
        }
    }

    /// Diagnostics that tend to the identity.
    pub fn tilde_rotations(&self) -> Result<Option<rotations::TildeRotations>> {
        match &self.dataset.truth {
            Some(truth) if !self.options.use_mw => rotations::tilde_rotations(truth, &self.pc).map(Some),
            _ => Ok(None),
        }
    }
}

/// Result of [`estimate_all`].
#[derive(Debug, Clone)]
pub struct Estimation {
    pub fit: AugmentedFit,
    pub pc: PcEstimate,
    pub rotations: Option<RotationSet>,
    pub targets: Option<Targets>,
    pub bc: BiasCorrectedSet,
}

/// Runs every estimator. The jackknife is skipped when `jackknife` is false.
pub fn estimate_all(dataset: &Dataset, r: usize, options: &EstimateOptions, jackknife: bool) -> Result<Estimation> {
    let mut ctx = EstimationContext::new(dataset, r, options)?;
    let analytic = ctx.analytic()?.clone();
    let jk = if jackknife {
        Some(ctx.jackknife()?.clone())
    } else {
        None
    };
    let (rotations, targets) = match ctx.targets()? {
        Some((rot, tg)) => (Some(rot), Some(tg)),
        None => (None, None),
    };
    let (delta_bcjk, jk_meta) = match jk {
        Some((d, m)) => (Some(d), Some(m)),
        None => (None, None),
    };
    Ok(Estimation {
        bc: BiasCorrectedSet {
            delta_hat: ctx.fit.delta_hat.clone(),
            delta_bc_hhat: analytic.delta_bc_hhat,
            delta_bc_hhat_q: analytic.delta_bc_hhat_q,
            delta_bcjk,
            kappa_hat: analytic.kappa_hat,
            kappa_bar_hat: analytic.kappa_bar_hat,
            jk_meta,
        },
        fit: ctx.fit,
        pc: ctx.pc,
        rotations,
        targets,
    })
}
