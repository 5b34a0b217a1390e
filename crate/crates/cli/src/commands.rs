use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use log::info;
use nalgebra::DVector;

use facreg::covariance::{PoetConfig, ThresholdKind};
use facreg::dgp::{self, Dataset, DgpConfig};
use facreg::estimators::Registry;
use facreg::io;
use facreg::manifest::RunManifest;
use facreg::mc::{self, ExperimentSpec};
use facreg::pipeline::{EstimateOptions, EstimationContext, DEFAULT_JK_SPLITS};
use facreg::regression::{self, CovKind};
use facreg::Error;

/// Maps a failure to the process exit status.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::ExcessiveDrops { .. }) => 4,
        Some(err) if err.is_numerical() => 3,
        _ => 2,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(T, Vec<u8>)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let value = serde_json::from_slice(&bytes)
        .map_err(Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok((value, bytes))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], manifest: &mut RunManifest) -> Result<()> {
    fs::write(dir.join(name), bytes).with_context(|| format!("writing {}", dir.join(name).display()))?;
    manifest.record_output(name, bytes);
    Ok(())
}

pub fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let (mut cfg, bytes): (DgpConfig, _) = read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = dgp::simulate(&cfg)?;
    io::write_dataset(out, &ds)?;
    let mut manifest = RunManifest::start("simulate", &bytes, Some(cfg.seed));
    for name in [io::X_FILE, io::YW_FILE, io::TRUTH_FILE] {
        manifest.record_output(name, &fs::read(out.join(name))?);
    }
    fs::write(out.join("manifest.json"), manifest.finish().to_json())?;
    info!("wrote dataset with N = {}, T = {} to {}", ds.n(), ds.t(), out.display());
    Ok(())
}

#[derive(Args, Debug, Clone)]
pub struct EstimateArgs {
    /// Dataset directory (X.csv + yW.csv) or a single CSV with y, w*, x* columns.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of factors.
    #[arg(long, default_value_t = 3)]
    pub r: usize,
    /// Forecast horizon: y_{t+h} is regressed on period-t regressors.
    #[arg(long, default_value_t = 0)]
    pub h: usize,
    /// Estimators to report.
    #[arg(long, value_delimiter = ',', default_value = "ls,bcjk,bcHhatq,bcHhat")]
    pub corrections: Vec<String>,
    /// Extract factors from the panel with W projected out.
    #[arg(long)]
    pub use_mw: bool,
    /// Coefficient covariance: homo, hetero, hac or hac(L).
    #[arg(long, default_value = "hac")]
    pub cov: String,
    /// POET threshold constant.
    #[arg(long, default_value_t = 0.5)]
    pub poet_c: f64,
    /// Use soft instead of hard thresholding.
    #[arg(long)]
    pub poet_soft: bool,
    /// Number of jackknife splits.
    #[arg(long, default_value_t = DEFAULT_JK_SPLITS)]
    pub jk_r: usize,
    /// Seed of the jackknife splits.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Do not append an intercept column to W.
    #[arg(long)]
    pub no_intercept: bool,
    /// Also test gamma1 = gamma2.
    #[arg(long)]
    pub test_diff: bool,
    /// Output directory; the report goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EstimateArgs {
    pub fn options(&self) -> Result<EstimateOptions> {
        let cov_kind: CovKind = self.cov.parse()?;
        Ok(EstimateOptions {
            poet: PoetConfig {
                threshold_const: self.poet_c,
                kind: if self.poet_soft { ThresholdKind::Soft } else { ThresholdKind::Hard },
                enforce_psd: true,
            },
            jk_splits: self.jk_r,
            jk_seed: self.seed,
            use_mw: self.use_mw,
            cov_kind,
        })
    }
}

/// Applies the horizon shift and the intercept convention.
pub fn prepare(ds: Dataset, h: usize, intercept: bool) -> Result<Dataset> {
    let t = ds.t();
    if h >= t {
        bail!(Error::InvalidConfig {
            field: "h".into(),
            reason: format!("horizon {h} leaves no observations out of T = {t}"),
        });
    }
    let keep = t - h;
    let x = ds.x.rows(0, keep).into_owned();
    let y = ds.y.rows(h, keep).into_owned();
    let mut w = ds.w.rows(0, keep).into_owned();
    let has_ones = (0..w.ncols()).any(|j| w.column(j).iter().all(|v| *v == 1.0));
    if intercept && !has_ones {
        let c = w.ncols();
        w = w.insert_column(c, 1.0);
    }
    if w.ncols() == 0 {
        bail!(Error::InvalidConfig {
            field: "W".into(),
            reason: "no observed regressors and --no-intercept given".into(),
        });
    }
    Ok(Dataset::new(x, y, w)?)
}

struct ReportRow {
    estimator: String,
    coefficient: String,
    estimate: f64,
    se: f64,
    t_stat: f64,
}

fn report_rows(ctx: &mut EstimationContext<'_>, args: &EstimateArgs, registry: &Registry) -> Result<Vec<ReportRow>> {
    let (r, p) = (ctx.fit.r, ctx.fit.p);
    let names = mc::coefficient_names(r, p);
    let se = ctx.fit.std_errors().ok_or_else(|| anyhow!("missing covariance"))?;
    let cov = ctx.fit.cov_delta.clone().expect("covariance attached");
    let mut rows = Vec::new();
    for est in registry.select(&args.corrections)? {
        let delta = est.estimate(ctx)?;
        for k in 0..r + p {
            rows.push(ReportRow {
                estimator: est.name().to_string(),
                coefficient: names[k].clone(),
                estimate: delta[k],
                se: se[k],
                t_stat: delta[k] / se[k],
            });
        }
        if args.test_diff {
            if r < 2 {
                bail!(Error::InvalidConfig {
                    field: "test-diff".into(),
                    reason: "needs at least two factors".into(),
                });
            }
            let mut a = DVector::zeros(r + p);
            a[0] = 1.0;
            a[1] = -1.0;
            let mut fit = ctx.fit.clone();
            fit.delta_hat = delta.clone();
            fit.cov_delta = Some(cov.clone());
            let test = regression::wald_linear(&fit, &a, 0.0)?;
            let var = (a.transpose() * &cov * &a)[(0, 0)];
            rows.push(ReportRow {
                estimator: est.name().to_string(),
                coefficient: "gamma1-gamma2".into(),
                estimate: delta[0] - delta[1],
                se: var.sqrt(),
                t_stat: test.stat,
            });
        }
    }
    Ok(rows)
}

fn write_report<W: Write>(out: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["estimator", "coefficient", "estimate", "se", "t_stat"])?;
    for r in rows {
        w.write_record([
            r.estimator.clone(),
            r.coefficient.clone(),
            r.estimate.to_string(),
            r.se.to_string(),
            r.t_stat.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn estimate(args: &EstimateArgs) -> Result<()> {
    let raw = io::read_dataset(&args.data)?;
    let ds = prepare(raw, args.h, !args.no_intercept)?;
    let options = args.options()?;
    let registry = Registry::default();
    registry.select(&args.corrections)?;
    let mut ctx = EstimationContext::new(&ds, args.r, &options)?;
    let rows = report_rows(&mut ctx, args, &registry)?;
    let mut buf = Vec::new();
    write_report(&mut buf, &rows)?;
    match &args.out {
        None => std::io::stdout().write_all(&buf)?,
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let config = format!("{args:?}");
            let mut manifest = RunManifest::start("estimate", config.as_bytes(), Some(args.seed));
            manifest.notes.push(format!("covariance: {}", options.cov_kind));
            write_file(dir, "estimates.csv", &buf, &mut manifest)?;
            fs::write(dir.join("manifest.json"), manifest.finish().to_json())?;
        }
    }
    Ok(())
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> facreg::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn mc(spec_path: &Path, out: &Path) -> Result<()> {
    let (spec, bytes): (ExperimentSpec, _) = read_json(spec_path)?;
    fs::create_dir_all(out)?;
    let mut manifest = RunManifest::start("mc", &bytes, Some(spec.seed));
    manifest.notes.push(format!("t statistics use the {} covariance", spec.options.cov_kind));
    let summary = mc::run_experiment(&spec)?;
    write_file(out, "summary.csv", &to_bytes(|b| io::write_summary(b, &summary))?, &mut manifest)?;
    write_file(
        out,
        "significance.csv",
        &to_bytes(|b| io::write_significance(b, &summary))?,
        &mut manifest,
    )?;
    write_file(
        out,
        "parameter_means.csv",
        &to_bytes(|b| io::write_parameter_means(b, &summary))?,
        &mut manifest,
    )?;
    if spec.power.is_some() {
        let rows = mc::run_power_curve(&spec)?;
        write_file(out, "power.csv", &to_bytes(|b| io::write_power(b, &rows))?, &mut manifest)?;
    }
    if summary.dropped > 0 {
        manifest.notes.push(format!("{} replications dropped", summary.dropped));
    }
    fs::write(out.join("manifest.json"), manifest.finish().to_json())?;
    Ok(())
}
