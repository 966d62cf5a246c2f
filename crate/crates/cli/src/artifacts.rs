use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use hinf_core::data::format_f64;
use serde::Serialize;

use crate::error::CliResult;

pub const MANIFEST_SCHEMA: &str = "hinf.manifest/1";
pub const THETA_CSV_SCHEMA: &str = "hinf.theta-csv/1";
pub const SCORE_CSV_SCHEMA: &str = "hinf.score-csv/1";
pub const DENSITY_CSV_SCHEMA: &str = "hinf.density-csv/1";
pub const TRACE_CSV_SCHEMA: &str = "hinf.trace-csv/1";
pub const DATA_CSV_SCHEMA: &str = "hinf.data-csv/1";
pub const RECORDS_CSV_SCHEMA: &str = "hinf.coverage-records-csv/1";
pub const MODEL_SCHEMA: &str = "hinf.model/1";
pub const DENSITY_BINS: usize = 40;

/// Output directory that records every artifact it writes.
pub struct OutDir {
    root: PathBuf,
    files: BTreeMap<String, String>,
    log: fs::File,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root)?;
        let log = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(root.join("run.log"))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
            log,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Appends a timestamped line to `run.log`, the only file that varies
    /// between identical runs.
    pub fn log(&mut self, msg: &str) {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let _ = writeln!(self.log, "[{ts:.3}] {msg}");
    }

    pub fn register(&mut self, name: &str, schema: &str) {
        self.files.insert(name.to_string(), schema.to_string());
    }

    pub fn json<T: Serialize>(&mut self, name: &str, schema: &str, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        fs::write(self.path(name), bytes)?;
        self.register(name, schema);
        Ok(())
    }

    pub fn csv(&mut self, name: &str, schema: &str, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        self.register(name, schema);
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<()> {
        #[derive(Serialize)]
        struct Entry<'a> {
            path: &'a str,
            schema: &'a str,
        }
        #[derive(Serialize)]
        struct Manifest<'a> {
            schema: &'a str,
            files: Vec<Entry<'a>>,
        }
        let files = std::mem::take(&mut self.files);
        let m = Manifest {
            schema: MANIFEST_SCHEMA,
            files: files
                .iter()
                .map(|(p, s)| Entry { path: p, schema: s })
                .collect(),
        };
        let mut bytes = serde_json::to_vec_pretty(&m)?;
        bytes.push(b'\n');
        fs::write(self.path("manifest.json"), bytes)?;
        Ok(())
    }
}

pub fn num(v: f64) -> String {
    format_f64(v)
}

/// Equal-width histogram of the finite values over their range.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize, f64)> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in &finite {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let total = finite.len() as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| {
            let a = lo + k as f64 * width;
            (a, a + width, c, c as f64 / (total * width))
        })
        .collect()
}

/// File-name-safe form of a target key.
pub fn slug(key: &str) -> String {
    key.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_integrates_to_one() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sqrt()).chain([f64::NAN]).collect();
        let h = histogram(&v, 10);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 1000);
        let mass: f64 = h.iter().map(|b| b.3 * (b.1 - b.0)).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert_eq!(histogram(&[2.0, 2.0], 4)[0].2, 2);
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("coef:2"), "coef_2");
        assert_eq!(slug("profit_at_opt"), "profit_at_opt");
    }
}
