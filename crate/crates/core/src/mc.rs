//! Monte Carlo replication engine.
//!
//! Every replication draws its data from a stream keyed by
//! `(master seed, cell index, replication index)`, so results do not depend
//! on the number of worker threads. Aggregates are reduced in replication
//! order from the collected per-replication records.

use std::sync::Arc;

use log::{info, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{DgpConfig, Simulator};
use crate::error::{Error, Result};
use crate::estimators::{Estimator, Registry};
use crate::pipeline::{EstimateOptions, EstimationContext, Target};
use crate::regression::Z_975;

/// Maximum tolerated share of dropped replications.
pub const MAX_DROP_SHARE: f64 = 0.01;

/// Factor-strength cell: exponents and scales of the signal eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthCell {
    pub alpha: Vec<f64>,
    pub d: Vec<f64>,
}

/// Parameters shared by every cell of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignTemplate {
    pub r: usize,
    pub p: usize,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub rho_e: f64,
    pub sigma_e: f64,
    pub theta: f64,
    pub s_order: usize,
    pub sigma_w: f64,
    pub sigma_eps: f64,
    pub gamma0: Vec<f64>,
    pub beta: Vec<f64>,
    pub noiseless: bool,
}

impl Default for DesignTemplate {
    fn default() -> Self {
        let c = DgpConfig::reference_design(50, [1.0, 1.0], [1.0, 1.0], 0.0, 0);
        Self {
            r: c.r,
            p: c.p,
            h: c.h,
            rho_e: c.rho_e,
            sigma_e: c.sigma_e,
            theta: c.theta,
            s_order: c.s_order,
            sigma_w: c.sigma_w,
            sigma_eps: c.sigma_eps,
            gamma0: c.gamma0,
            beta: c.beta,
            noiseless: false,
        }
    }
}

impl DesignTemplate {
    pub fn config(&self, size: usize, cell: &StrengthCell, rho_fw: f64) -> DgpConfig {
        DgpConfig {
            n: size,
            t: size,
            r: self.r,
            p: self.p,
            alpha: cell.alpha.clone(),
            d: cell.d.clone(),
            h: self.h.clone(),
            rho_e: self.rho_e,
            sigma_e: self.sigma_e,
            theta: self.theta,
            s_order: self.s_order,
            rho_fw,
            sigma_w: self.sigma_w,
            sigma_eps: self.sigma_eps,
            gamma0: self.gamma0.clone(),
            beta: self.beta.clone(),
            seed: 0,
            noiseless: self.noiseless,
        }
    }
}

/// Coefficient whose true value is varied along a power grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpec {
    /// Coefficient name, e.g. `gamma2` or `beta1`.
    pub coefficient: String,
    pub grid: Vec<f64>,
}

fn default_estimators() -> Vec<String> {
    ["ls", "bcjk", "bcHhatq", "bcHhat"].iter().map(|s| s.to_string()).collect()
}

fn default_targets() -> Vec<Target> {
    Target::ALL.to_vec()
}

fn default_rho() -> Vec<f64> {
    vec![0.0]
}

/// A grid of simulation designs and what to compute on each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// `N = T` values.
    pub sizes: Vec<usize>,
    pub cells: Vec<StrengthCell>,
    #[serde(default = "default_rho")]
    pub rho_fw: Vec<f64>,
    pub nrep: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    #[serde(default = "default_targets")]
    pub targets: Vec<Target>,
    #[serde(default)]
    pub use_mw: bool,
    #[serde(default)]
    pub design: DesignTemplate,
    #[serde(default)]
    pub options: EstimateOptions,
    #[serde(default)]
    pub power: Option<PowerSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self, registry: &Registry) -> Result<()> {
        if self.nrep == 0 {
            return Err(Error::config("nrep", "must be at least 1"));
        }
        if self.sizes.is_empty() {
            return Err(Error::config("sizes", "grid must be nonempty"));
        }
        if self.cells.is_empty() {
            return Err(Error::config("cells", "grid must be nonempty"));
        }
        if self.rho_fw.is_empty() {
            return Err(Error::config("rho_fw", "grid must be nonempty"));
        }
        if self.estimators.is_empty() {
            return Err(Error::config("estimators", "select at least one estimator"));
        }
        registry.select(&self.estimators)?;
        for cell in self.cell_grid() {
            let (cfg, _) = cell.config.ordered();
            cfg.validate()?;
        }
        if let Some(p) = &self.power {
            if p.grid.is_empty() {
                return Err(Error::config("power.grid", "grid must be nonempty"));
            }
            coefficient_index(&p.coefficient, self.design.r, self.design.p)?;
        }
        self.options.poet.validate()
    }

    /// Every `(size, strength, rho_fw)` combination, sizes varying slowest.
    pub fn cell_grid(&self) -> Vec<CellSpec> {
        let mut out = Vec::new();
        for &size in &self.sizes {
            for strength in &self.cells {
                for &rho in &self.rho_fw {
                    out.push(CellSpec {
                        index: out.len(),
                        config: self.design.config(size, strength, rho),
                    });
                }
            }
        }
        out
    }
}

/// One design cell with its position in the grid.
#[derive(Debug, Clone)]
pub struct CellSpec {
    pub index: usize,
    pub config: DgpConfig,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Replication seed for `(master, cell, rep)`.
pub fn replication_seed(master: u64, cell: usize, rep: usize) -> u64 {
    let a = splitmix64(master ^ splitmix64(cell as u64 ^ 0xA076_1D64_78BD_642F));
    splitmix64(a ^ splitmix64(rep as u64))
}

/// Names `gamma1..gamma_r, beta1..beta_p`.
pub fn coefficient_names(r: usize, p: usize) -> Vec<String> {
    (1..=r)
        .map(|k| format!("gamma{k}"))
        .chain((1..=p).map(|k| format!("beta{k}")))
        .collect()
}

/// Position of a named coefficient in `delta`.
pub fn coefficient_index(name: &str, r: usize, p: usize) -> Result<usize> {
    coefficient_names(r, p)
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::config("coefficient", format!("unknown coefficient '{name}'")))
}

/// Everything kept from one replication, coefficients in the original labels.
#[derive(Debug, Clone)]
pub struct RepRecord {
    pub rep: usize,
    /// One vector per selected estimator, in spec order.
    pub estimates: Vec<DVector<f64>>,
    /// Standard errors from the LS fit.
    pub se: DVector<f64>,
    pub delta0: DVector<f64>,
    pub delta_hhat: DVector<f64>,
    pub delta_hhat_q: DVector<f64>,
    /// `beta` or `beta_w`.
    pub beta: DVector<f64>,
}

impl RepRecord {
    pub fn target(&self, target: Target) -> &DVector<f64> {
        match target {
            Target::Delta0 => &self.delta0,
            Target::DeltaHhat => &self.delta_hhat,
            Target::DeltaHhatQ => &self.delta_hhat_q,
            Target::Beta => &self.beta,
        }
    }
}

/// Maps eigen-ordered factor positions back to the configured labels.
fn relabel(v: &DVector<f64>, order: &[usize]) -> DVector<f64> {
    let mut out = v.clone();
    for (k, &orig) in order.iter().enumerate() {
        out[orig] = v[k];
    }
    out
}

/// Per-replication records of one cell.
#[derive(Debug, Clone)]
pub struct CellRecords {
    pub cell: CellSpec,
    pub estimators: Vec<String>,
    pub records: Vec<RepRecord>,
    pub dropped: usize,
}

fn one_rep(
    sim: &Simulator,
    order: &[usize],
    estimators: &[Arc<dyn Estimator>],
    options: &EstimateOptions,
    seed: u64,
    rep: usize,
) -> Result<RepRecord> {
    let ds = sim.draw(seed)?;
    let r = sim.config().r;
    let opts = EstimateOptions {
        jk_seed: splitmix64(seed ^ 0x6A09_E667_F3BC_C908),
        ..options.clone()
    };
    let mut ctx = EstimationContext::aligned_to_truth(&ds, r, &opts)?;
    let mut estimates = Vec::with_capacity(estimators.len());
    for e in estimators {
        estimates.push(relabel(&e.estimate(&mut ctx)?, order));
    }
    let se = relabel(&ctx.fit.std_errors().expect("covariance attached"), order);
    let (_, tg) = ctx.targets()?.expect("simulated data carries its truth");
    Ok(RepRecord {
        rep,
        estimates,
        se,
        delta0: relabel(&tg.delta0, order),
        delta_hhat: relabel(&tg.delta_hhat, order),
        delta_hhat_q: relabel(&tg.delta_hhat_q, order),
        beta: tg.beta,
    })
}

/// Runs all replications of one cell, keyed by `seed_cell` for the streams.
pub fn run_cell(
    spec: &ExperimentSpec,
    cell: &CellSpec,
    seed_cell: usize,
    registry: &Registry,
) -> Result<CellRecords> {
    let (cfg, order) = cell.config.ordered();
    let sim = Simulator::new(cfg)?;
    let estimators = registry.select(&spec.estimators)?;
    let mut options = spec.options.clone();
    options.use_mw = spec.use_mw;
    let results: Vec<Result<RepRecord>> = (0..spec.nrep)
        .into_par_iter()
        .map(|rep| {
            let seed = replication_seed(spec.seed, seed_cell, rep);
            one_rep(&sim, &order, &estimators, &options, seed, rep)
        })
        .collect();
    let mut records = Vec::with_capacity(spec.nrep);
    let mut dropped = 0;
    for res in results {
        match res {
            Ok(r) => records.push(r),
            Err(e) if e.is_numerical() => {
                dropped += 1;
                warn!("cell {} replication dropped: {e}", cell.index);
            }
            Err(e) => return Err(e),
        }
    }
    let limit = (MAX_DROP_SHARE * spec.nrep as f64).floor() as usize;
    if dropped > limit {
        return Err(Error::ExcessiveDrops {
            dropped,
            total: spec.nrep,
            limit,
        });
    }
    Ok(CellRecords {
        cell: cell.clone(),
        estimators: spec.estimators.clone(),
        records,
        dropped,
    })
}

/// `sorted[ceil(0.95 n) - 1]` of the absolute values.
pub fn quantile95_abs(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().map(|x| x.abs()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = ((0.95 * v.len() as f64).ceil() as usize).max(1) - 1;
    v[k]
}

/// Mean and sample standard deviation (`n - 1` denominator).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Design identifiers repeated on every output row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellKey {
    pub cell: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub alpha: String,
    pub d: String,
    pub rho_fw: f64,
    pub use_mw: bool,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

impl CellKey {
    fn new(cell: &CellSpec, use_mw: bool) -> Self {
        Self {
            cell: cell.index,
            n: cell.config.n,
            t: cell.config.t,
            alpha: join(&cell.config.alpha),
            d: join(&cell.config.d),
            rho_fw: cell.config.rho_fw,
            use_mw,
        }
    }
}

/// Bias, spread and test size of one estimator against one target.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub key: CellKey,
    pub estimator: String,
    pub target: Target,
    pub coefficient: String,
    pub bias: f64,
    pub sd: f64,
    /// `sd / sqrt(n)`.
    pub mc_se: f64,
    pub size_5pct: f64,
    pub quantile95_abs_t: f64,
    pub nrep_effective: usize,
}

/// Size of `H0: coefficient = 0` using the raw estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceRow {
    pub key: CellKey,
    pub estimator: String,
    pub coefficient: String,
    pub size_5pct: f64,
    pub quantile95_abs_t: f64,
    pub nrep_effective: usize,
}

/// Replication means of the pseudo-true factor coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMeanRow {
    pub key: CellKey,
    pub target: Target,
    pub coefficient: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Default)]
pub struct McSummary {
    pub rows: Vec<SummaryRow>,
    pub significance: Vec<SignificanceRow>,
    pub parameter_means: Vec<ParameterMeanRow>,
    pub dropped: usize,
}

impl McSummary {
    /// Looks up a single summary row.
    pub fn find(&self, cell: usize, estimator: &str, target: Target, coefficient: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| {
            r.key.cell == cell && r.estimator == estimator && r.target == target && r.coefficient == coefficient
        })
    }

    pub fn find_significance(&self, cell: usize, estimator: &str, coefficient: &str) -> Option<&SignificanceRow> {
        self.significance
            .iter()
            .find(|r| r.key.cell == cell && r.estimator == estimator && r.coefficient == coefficient)
    }

    pub fn find_parameter_mean(&self, cell: usize, target: Target, coefficient: &str) -> Option<&ParameterMeanRow> {
        self.parameter_means
            .iter()
            .find(|r| r.key.cell == cell && r.target == target && r.coefficient == coefficient)
    }
}

/// Coefficient indices compared against a target.
fn target_coefficients(target: Target, r: usize, p: usize) -> std::ops::Range<usize> {
    match target {
        Target::Beta => r..r + p,
        _ => 0..r + p,
    }
}

/// Reduces a cell's records into summary rows.
pub fn summarize_cell(cr: &CellRecords, targets: &[Target], use_mw: bool) -> McSummary {
    let (r, p) = (cr.cell.config.r, cr.cell.config.p);
    let names = coefficient_names(r, p);
    let key = CellKey::new(&cr.cell, use_mw);
    let n = cr.records.len();
    let mut out = McSummary {
        dropped: cr.dropped,
        ..Default::default()
    };
    if n == 0 {
        return out;
    }
    for (ei, est) in cr.estimators.iter().enumerate() {
        for &target in targets {
            for k in target_coefficients(target, r, p) {
                let tk = if target == Target::Beta { k - r } else { k };
                let diffs: Vec<f64> = cr
                    .records
                    .iter()
                    .map(|rec| rec.estimates[ei][k] - rec.target(target)[tk])
                    .collect();
                let tstats: Vec<f64> = cr
                    .records
                    .iter()
                    .zip(&diffs)
                    .map(|(rec, d)| d / rec.se[k])
                    .collect();
                let (bias, sd) = mean_sd(&diffs);
                let rejections = tstats.iter().filter(|t| t.abs() > Z_975).count();
                out.rows.push(SummaryRow {
                    key: key.clone(),
                    estimator: est.clone(),
                    target,
                    coefficient: names[k].clone(),
                    bias,
                    sd,
                    mc_se: sd / (n as f64).sqrt(),
                    size_5pct: rejections as f64 / n as f64,
                    quantile95_abs_t: quantile95_abs(&tstats),
                    nrep_effective: n,
                });
            }
        }
        for k in 0..r + p {
            let tstats: Vec<f64> = cr.records.iter().map(|rec| rec.estimates[ei][k] / rec.se[k]).collect();
            let rejections = tstats.iter().filter(|t| t.abs() > Z_975).count();
            out.significance.push(SignificanceRow {
                key: key.clone(),
                estimator: est.clone(),
                coefficient: names[k].clone(),
                size_5pct: rejections as f64 / n as f64,
                quantile95_abs_t: quantile95_abs(&tstats),
                nrep_effective: n,
            });
        }
    }
    for target in [Target::Delta0, Target::DeltaHhat, Target::DeltaHhatQ] {
        for k in 0..r {
            let vals: Vec<f64> = cr.records.iter().map(|rec| rec.target(target)[k]).collect();
            let (mean, sd) = mean_sd(&vals);
            out.parameter_means.push(ParameterMeanRow {
                key: key.clone(),
                target,
                coefficient: names[k].clone(),
                mean,
                sd,
            });
        }
    }
    out
}

/// Runs every cell of the grid.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<McSummary> {
    run_experiment_with(spec, &Registry::default())
}

pub fn run_experiment_with(spec: &ExperimentSpec, registry: &Registry) -> Result<McSummary> {
    spec.validate(registry)?;
    let mut out = McSummary::default();
    for cell in spec.cell_grid() {
        info!(
            "cell {}: N=T={} alpha={:?} d={:?} rho_fw={}",
            cell.index, cell.config.n, cell.config.alpha, cell.config.d, cell.config.rho_fw
        );
        let cr = run_cell(spec, &cell, cell.index, registry)?;
        let s = summarize_cell(&cr, &spec.targets, spec.use_mw);
        out.rows.extend(s.rows);
        out.significance.extend(s.significance);
        out.parameter_means.extend(s.parameter_means);
        out.dropped += s.dropped;
    }
    Ok(out)
}

/// Rejection rates of one estimator at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerRow {
    pub key: CellKey,
    pub estimator: String,
    pub coefficient: String,
    pub value: f64,
    pub reject_raw: f64,
    pub reject_size_adjusted: f64,
    /// Null 95% quantile of `|t|` used as the critical value.
    pub critical_value: f64,
    pub nrep_effective: usize,
}

fn with_coefficient(cfg: &DgpConfig, k: usize, value: f64) -> DgpConfig {
    let mut out = cfg.clone();
    if k < cfg.r {
        out.gamma0[k] = value;
    } else {
        out.beta[k - cfg.r] = value;
    }
    out
}

fn abs_t(cr: &CellRecords, ei: usize, k: usize) -> Vec<f64> {
    cr.records
        .iter()
        .map(|rec| (rec.estimates[ei][k] / rec.se[k]).abs())
        .collect()
}

/// Significance-test power along `spec.power.grid` for every cell.
///
/// The null (coefficient = 0) is always simulated first to obtain the
/// size-adjusted critical values. Replication streams are shared across
/// grid points.
pub fn run_power_curve(spec: &ExperimentSpec) -> Result<Vec<PowerRow>> {
    let registry = Registry::default();
    spec.validate(&registry)?;
    let power = spec
        .power
        .as_ref()
        .ok_or_else(|| Error::config("power", "the spec has no power grid"))?;
    let k = coefficient_index(&power.coefficient, spec.design.r, spec.design.p)?;
    let mut rows = Vec::new();
    for cell in spec.cell_grid() {
        let key = CellKey::new(&cell, spec.use_mw);
        let null_cell = CellSpec {
            index: cell.index,
            config: with_coefficient(&cell.config, k, 0.0),
        };
        let null = run_cell(spec, &null_cell, cell.index, &registry)?;
        let crit: Vec<f64> = (0..spec.estimators.len())
            .map(|ei| quantile95_abs(&abs_t(&null, ei, k)))
            .collect();
        for &value in &power.grid {
            let cr = if value == 0.0 {
                null.clone()
            } else {
                let c = CellSpec {
                    index: cell.index,
                    config: with_coefficient(&cell.config, k, value),
                };
                run_cell(spec, &c, cell.index, &registry)?
            };
            let n = cr.records.len();
            for (ei, est) in spec.estimators.iter().enumerate() {
                let t = abs_t(&cr, ei, k);
                rows.push(PowerRow {
                    key: key.clone(),
                    estimator: est.clone(),
                    coefficient: power.coefficient.clone(),
                    value,
                    reject_raw: t.iter().filter(|v| **v > Z_975).count() as f64 / n as f64,
                    reject_size_adjusted: t.iter().filter(|v| **v > crit[ei]).count() as f64 / n as f64,
                    critical_value: crit[ei],
                    nrep_effective: n,
                });
            }
        }
    }
    Ok(rows)
}

/// The grid `-0.4, -0.375, ..., 0.4`.
pub fn standard_power_grid() -> Vec<f64> {
    (-16..=16).map(|i| i as f64 * 0.025).collect()
}
