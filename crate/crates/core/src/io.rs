//! CSV and JSON persistence for datasets and Monte Carlo summaries.
//!
//! Matrices are written with Rust's shortest round-trip float formatting, so
//! reading a file back reproduces the in-memory values exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dgp::{Dataset, GroundTruth};
use crate::error::{Error, Result};
use crate::mc::{CellKey, McSummary, PowerRow};

pub const X_FILE: &str = "X.csv";
pub const YW_FILE: &str = "yW.csv";
pub const TRUTH_FILE: &str = "truth.json";

/// Writes a matrix with the given header.
pub fn write_matrix<W: Write>(out: W, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    let mut row = Vec::with_capacity(m.ncols());
    for i in 0..m.nrows() {
        row.clear();
        row.extend((0..m.ncols()).map(|j| m[(i, j)].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV with a header row.
pub fn read_matrix(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Format(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                line + 2,
                rec.len(),
                header.len()
            )));
        }
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!(
                    "{}: row {}, column '{}': '{}' is not a number",
                    path.display(),
                    line + 2,
                    header[col],
                    field
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "{}: row {}, column '{}' is not finite",
                    path.display(),
                    line + 2,
                    header[col]
                )));
            }
            data.push(v);
        }
        rows += 1;
    }
    Ok((header.clone(), DMatrix::from_row_slice(rows, header.len(), &data)))
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}{k}")).collect()
}

/// Serializable view of [`GroundTruth`]; matrices as row-major nested lists.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TruthRecord {
    pub f0: Vec<Vec<f64>>,
    pub b0: Vec<Vec<f64>>,
    pub fstar: Vec<Vec<f64>>,
    pub bstar: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub gamma0: Vec<f64>,
    pub gamma_star: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: Vec<f64>,
    pub lambda: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Format(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl TruthRecord {
    pub fn from_truth(t: &GroundTruth) -> Self {
        Self {
            f0: rows_of(&t.f0),
            b0: rows_of(&t.b0),
            fstar: rows_of(&t.fstar),
            bstar: rows_of(&t.bstar),
            h: rows_of(&t.hmat),
            gamma0: t.gamma0.iter().cloned().collect(),
            gamma_star: t.gamma_star.iter().cloned().collect(),
            beta: t.beta.iter().cloned().collect(),
            eps: t.eps.iter().cloned().collect(),
            lambda: t.lambda.iter().cloned().collect(),
        }
    }

    /// Rebuilds the truth; `E` is recovered as `X - F* B*'`.
    pub fn into_truth(self, x: &DMatrix<f64>) -> Result<GroundTruth> {
        let fstar = from_rows(&self.fstar, "fstar")?;
        let bstar = from_rows(&self.bstar, "bstar")?;
        if fstar.nrows() != x.nrows() || bstar.nrows() != x.ncols() {
            return Err(Error::Format("truth dimensions do not match X".into()));
        }
        let e = x - &fstar * bstar.transpose();
        Ok(GroundTruth {
            f0: from_rows(&self.f0, "f0")?,
            b0: from_rows(&self.b0, "b0")?,
            fstar,
            bstar,
            hmat: from_rows(&self.h, "H")?,
            gamma0: DVector::from_vec(self.gamma0),
            gamma_star: DVector::from_vec(self.gamma_star),
            beta: DVector::from_vec(self.beta),
            e,
            eps: DVector::from_vec(self.eps),
            lambda: DVector::from_vec(self.lambda),
        })
    }
}

/// Writes `X.csv`, `yW.csv` and, when present, `truth.json` into `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(fs::File::create(dir.join(X_FILE))?, &numbered("x", ds.n()), &ds.x)?;
    let mut yw = DMatrix::zeros(ds.t(), 1 + ds.w.ncols());
    yw.set_column(0, &ds.y);
    yw.columns_mut(1, ds.w.ncols()).copy_from(&ds.w);
    let mut header = vec!["y".to_string()];
    header.extend(numbered("w", ds.w.ncols()));
    write_matrix(fs::File::create(dir.join(YW_FILE))?, &header, &yw)?;
    if let Some(t) = &ds.truth {
        let js = serde_json::to_string(&TruthRecord::from_truth(t))?;
        fs::write(dir.join(TRUTH_FILE), js)?;
    }
    Ok(())
}

fn split_columns(header: &[String], m: &DMatrix<f64>, path: &Path) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let find = |pred: &dyn Fn(&str) -> bool| -> Vec<usize> {
        header.iter().enumerate().filter(|(_, h)| pred(h)).map(|(i, _)| i).collect()
    };
    let y_cols = find(&|h| h == "y");
    if y_cols.len() != 1 {
        return Err(Error::Format(format!("{}: expected exactly one 'y' column", path.display())));
    }
    let w_cols = find(&|h| h.starts_with('w'));
    let x_cols = find(&|h| h.starts_with('x'));
    let y = m.column(y_cols[0]).into_owned();
    let w = DMatrix::from_fn(m.nrows(), w_cols.len(), |i, j| m[(i, w_cols[j])]);
    let x = DMatrix::from_fn(m.nrows(), x_cols.len(), |i, j| m[(i, x_cols[j])]);
    Ok((y, w, x))
}

/// Loads a dataset from a directory written by [`write_dataset`] or from a
/// single CSV whose columns are `y`, `w*` and `x*`.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    if path.is_dir() {
        let (_, x) = read_matrix(&path.join(X_FILE))?;
        let yw_path = path.join(YW_FILE);
        let (header, yw) = read_matrix(&yw_path)?;
        let (y, w, _) = split_columns(&header, &yw, &yw_path)?;
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "rows of X.csv vs yW.csv",
                expected: y.len(),
                actual: x.nrows(),
            });
        }
        let truth_path = path.join(TRUTH_FILE);
        let truth = if truth_path.exists() {
            let rec: TruthRecord = serde_json::from_str(&fs::read_to_string(truth_path)?)?;
            Some(rec.into_truth(&x)?)
        } else {
            None
        };
        let mut ds = Dataset::new(x, y, w)?;
        ds.truth = truth;
        Ok(ds)
    } else {
        let (header, m) = read_matrix(path)?;
        let (y, w, x) = split_columns(&header, &m, path)?;
        if x.ncols() == 0 {
            return Err(Error::Format(format!("{}: no 'x' columns", path.display())));
        }
        Dataset::new(x, y, w)
    }
}

/// Formats with 6 significant digits.
pub fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let s = format!("{v:.5e}");
    let (mant, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        format!("{mant}e{exp}")
    }
}

fn key_fields(k: &CellKey) -> Vec<String> {
    vec![
        k.cell.to_string(),
        k.n.to_string(),
        k.t.to_string(),
        k.alpha.clone(),
        k.d.clone(),
        k.rho_fw.to_string(),
        k.use_mw.to_string(),
    ]
}

const KEY_HEADER: [&str; 7] = ["cell", "N", "T", "alpha", "d", "rho_fw", "use_mw"];

fn header(extra: &[&str]) -> Vec<String> {
    KEY_HEADER.iter().chain(extra).map(|s| s.to_string()).collect()
}

pub fn write_summary<W: Write>(out: W, s: &McSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(&[
        "estimator",
        "target",
        "coefficient",
        "bias",
        "sd",
        "mc_se",
        "size_5pct",
        "quantile95_abs_t",
        "nrep_effective",
    ]))?;
    for r in &s.rows {
        let mut rec = key_fields(&r.key);
        rec.extend([
            r.estimator.clone(),
            r.target.to_string(),
            r.coefficient.clone(),
            sig6(r.bias),
            sig6(r.sd),
            sig6(r.mc_se),
            sig6(r.size_5pct),
            sig6(r.quantile95_abs_t),
            r.nrep_effective.to_string(),
        ]);
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_significance<W: Write>(out: W, s: &McSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(&["estimator", "coefficient", "size_5pct", "quantile95_abs_t", "nrep_effective"]))?;
    for r in &s.significance {
        let mut rec = key_fields(&r.key);
        rec.extend([
            r.estimator.clone(),
            r.coefficient.clone(),
            sig6(r.size_5pct),
            sig6(r.quantile95_abs_t),
            r.nrep_effective.to_string(),
        ]);
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_parameter_means<W: Write>(out: W, s: &McSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(&["target", "coefficient", "mean", "sd"]))?;
    for r in &s.parameter_means {
        let mut rec = key_fields(&r.key);
        rec.extend([r.target.to_string(), r.coefficient.clone(), sig6(r.mean), sig6(r.sd)]);
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_power<W: Write>(out: W, rows: &[PowerRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(&[
        "estimator",
        "coefficient",
        "value",
        "reject_raw",
        "reject_size_adjusted",
        "critical_value",
        "nrep_effective",
    ]))?;
    for r in rows {
        let mut rec = key_fields(&r.key);
        rec.extend([
            r.estimator.clone(),
            r.coefficient.clone(),
            sig6(r.value),
            sig6(r.reject_raw),
            sig6(r.reject_size_adjusted),
            sig6(r.critical_value),
            r.nrep_effective.to_string(),
        ]);
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}
