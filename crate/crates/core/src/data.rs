//! Observations `(y, t, x)` and CSV ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Mat;

/// Affine map of one covariate column onto `[−1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub column: String,
    pub min: f64,
    pub max: f64,
    /// The column was constant; it is passed through as 0.
    pub constant: bool,
}

impl Rescale {
    pub fn apply(&self, v: f64) -> f64 {
        if self.constant {
            0.0
        } else {
            2.0 * (v - self.min) / (self.max - self.min) - 1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHot {
    pub column: String,
    /// All levels, sorted; the first is the dropped reference level.
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub y_names: Vec<String>,
    pub t_names: Vec<String>,
    pub x_names: Vec<String>,
    pub intercept: bool,
    pub one_hot: Vec<OneHot>,
    pub rescale: Vec<Rescale>,
    pub dropped_rows: usize,
}

/// Observations stored as three row-aligned blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Mat,
    pub t: Mat,
    pub x: Mat,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(y: Mat, t: Mat, x: Mat) -> Result<Self> {
        let n = y.rows();
        if t.rows() != n {
            return Err(Error::dim("Dataset: t rows", n, t.rows()));
        }
        if x.rows() != n {
            return Err(Error::dim("Dataset: x rows", n, x.rows()));
        }
        Ok(Self {
            y,
            t,
            x,
            meta: DatasetMeta::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.rows()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            y: self.y.select_rows(idx),
            t: self.t.select_rows(idx),
            x: self.x.select_rows(idx),
            meta: self.meta.clone(),
        }
    }
}

/// Which CSV columns feed each block.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub y: Vec<String>,
    #[serde(default)]
    pub t: Vec<String>,
    #[serde(default)]
    pub x: Vec<String>,
    /// Categorical columns expanded to indicators. Columns not already
    /// listed under `t` or `x` are appended to `x`.
    #[serde(default)]
    pub one_hot: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Prepend a column of ones to `t`.
    pub intercept: bool,
    /// Rescale continuous covariates to `[−1, 1]`.
    pub rescale_x: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            intercept: true,
            rescale_x: true,
        }
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "null")
}

pub fn ingest(path: impl AsRef<Path>, mapping: &ColumnMapping, opts: &IngestOptions) -> Result<Dataset> {
    let rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    ingest_reader(rdr, mapping, opts)
}

pub fn ingest_reader<R: std::io::Read>(
    mut rdr: csv::Reader<R>,
    mapping: &ColumnMapping,
    opts: &IngestOptions,
) -> Result<Dataset> {
    let headers = rdr.headers()?.clone();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let categorical: BTreeSet<&str> = mapping.one_hot.iter().map(String::as_str).collect();
    let mut x_cols = mapping.x.clone();
    for c in &mapping.one_hot {
        if !mapping.t.contains(c) && !x_cols.contains(c) {
            x_cols.push(c.clone());
        }
    }
    let used: Vec<&String> = mapping.y.iter().chain(&mapping.t).chain(&x_cols).collect();
    let idx: BTreeMap<&str, usize> = used
        .iter()
        .map(|c| Ok((c.as_str(), position(c)?)))
        .collect::<Result<_>>()?;

    // Keep complete rows as raw strings first; levels need the whole column.
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    let mut dropped = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if idx.values().any(|&i| rec.get(i).map_or(true, is_missing)) {
            dropped += 1;
        } else {
            rows.push(rec);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyAfterDrop);
    }

    let mut levels: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for &c in &categorical {
        let set: BTreeSet<String> = rows.iter().map(|r| r[idx[c]].to_string()).collect();
        levels.insert(c, set.into_iter().collect());
    }

    let numeric = |name: &str, row: usize, rec: &csv::StringRecord| -> Result<f64> {
        let cell = &rec[idx[name]];
        cell.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::NonNumericCell {
                column: name.to_string(),
                row: row + 1,
                value: cell.to_string(),
            })
    };

    // Expands a list of columns into named numeric columns.
    let build = |cols: &[String]| -> Result<(Vec<String>, Vec<Vec<f64>>, Vec<bool>)> {
        let mut names = Vec::new();
        let mut data: Vec<Vec<f64>> = Vec::new();
        let mut continuous = Vec::new();
        for c in cols {
            if let Some(lv) = levels.get(c.as_str()) {
                for level in &lv[1..] {
                    names.push(format!("{c}={level}"));
                    data.push(
                        rows.iter()
                            .map(|r| if &r[idx[c.as_str()]] == level { 1.0 } else { 0.0 })
                            .collect(),
                    );
                    continuous.push(false);
                }
            } else {
                names.push(c.clone());
                data.push(
                    rows.iter()
                        .enumerate()
                        .map(|(i, r)| numeric(c, i, r))
                        .collect::<Result<_>>()?,
                );
                continuous.push(true);
            }
        }
        Ok((names, data, continuous))
    };

    let (y_names, y_cols, _) = build(&mapping.y)?;
    let (mut t_names, mut t_cols, _) = build(&mapping.t)?;
    let (x_names, mut x_data, x_cont) = build(&x_cols)?;
    let n = rows.len();
    if opts.intercept {
        t_names.insert(0, "(intercept)".into());
        t_cols.insert(0, vec![1.0; n]);
    }

    let mut rescale = Vec::new();
    if opts.rescale_x {
        for ((name, col), cont) in x_names.iter().zip(x_data.iter_mut()).zip(&x_cont) {
            if !cont {
                continue;
            }
            let min = col.iter().copied().fold(f64::INFINITY, f64::min);
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let r = Rescale {
                column: name.clone(),
                min,
                max,
                constant: max <= min,
            };
            col.iter_mut().for_each(|v| *v = r.apply(*v));
            rescale.push(r);
        }
    }

    let to_mat = |cols: &[Vec<f64>]| -> Mat {
        let mut m = Mat::zeros(n, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                m.row_mut(i)[j] = *v;
            }
        }
        m
    };
    let mut ds = Dataset::new(to_mat(&y_cols), to_mat(&t_cols), to_mat(&x_data))?;
    ds.meta = DatasetMeta {
        y_names,
        t_names,
        x_names,
        intercept: opts.intercept,
        one_hot: levels
            .into_iter()
            .map(|(c, l)| OneHot {
                column: c.to_string(),
                levels: l,
            })
            .collect(),
        rescale,
        dropped_rows: dropped,
    };
    Ok(ds)
}

/// Writes named columns as CSV.
pub fn write_columns<W: std::io::Write>(w: W, names: &[String], columns: &[&[f64]]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(names)?;
    let n = columns.first().map_or(0, |c| c.len());
    for i in 0..n {
        wtr.write_record(columns.iter().map(|c| format_f64(c[i])))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Shortest round-trip decimal form.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}
