//! `report.csv` (two columns, `metric,value`) and report comparison.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: &str, value: &str) {
        self.rows.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.rows.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["metric", "value"])?;
        for (k, v) in &self.rows {
            w.write_record([k, v])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Report> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 2 {
                bail!("{}: expected two columns", path.display());
            }
            rows.push((rec[0].to_string(), rec[1].to_string()));
        }
        Ok(Report { rows })
    }
}

/// Accepts a run directory or a `report.csv` path.
pub fn report_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("report.csv")
    } else {
        p.to_path_buf()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delta {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `(b - a) / |a|`, zero when both are equal.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub scenario: String,
    pub deltas: Vec<Delta>,
    /// Final reduced-order errors `(a, b)` when both reports carry one.
    pub final_error: Option<(f64, f64)>,
    pub regression: bool,
}

#[derive(Debug, thiserror::Error)]
#[error("scenario mismatch: {0} vs {1}")]
pub struct ScenarioMismatch(pub String, pub String);

pub fn compare(a: &Report, b: &Report) -> Result<Comparison> {
    let (na, nb) = (a.get("scenario").unwrap_or(""), b.get("scenario").unwrap_or(""));
    if na != nb || na.is_empty() {
        return Err(ScenarioMismatch(na.to_string(), nb.to_string()).into());
    }
    let mut deltas = Vec::new();
    for (k, va) in &a.rows {
        let (Ok(x), Some(y)) = (va.parse::<f64>(), b.number(k)) else { continue };
        let relative = if x == y { 0.0 } else { (y - x) / x.abs() };
        deltas.push(Delta { metric: k.clone(), a: x, b: y, relative });
    }
    let final_error = match (a.number("final_error"), b.number("final_error")) {
        (Some(x), Some(y)) => Some((x, y)),
        _ => None,
    };
    let regression = matches!(final_error, Some((x, y)) if y > 1.1 * x);
    Ok(Comparison { scenario: na.to_string(), deltas, final_error, regression })
}
