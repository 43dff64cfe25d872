//! Result rows, CSV encoding and the run manifest.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const COLUMNS: [&str; 15] = [
    "config",
    "experiment",
    "quantity",
    "depth",
    "hurst",
    "beta",
    "trial",
    "statistic",
    "value",
    "std_error",
    "lower",
    "upper",
    "trials",
    "overflow",
    "status",
];

/// One flat output row. Empty optional fields become empty CSV cells.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Record {
    pub quantity: String,
    pub depth: Option<usize>,
    pub hurst: Option<f64>,
    pub beta: Option<f64>,
    pub trial: Option<usize>,
    pub statistic: String,
    /// `None` for overflowed values; `status` then says so.
    pub value: Option<f64>,
    pub std_error: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub trials: Option<usize>,
    pub overflow: Option<usize>,
    pub status: String,
}

impl Record {
    pub fn new(quantity: &str, statistic: &str) -> Self {
        Self {
            quantity: quantity.to_string(),
            statistic: statistic.to_string(),
            ..Self::default()
        }
    }

    pub fn depth(mut self, depth: usize) -> Self {
        self.depth = Some(depth);
        self
    }

    pub fn hurst(mut self, hurst: f64) -> Self {
        self.hurst = Some(hurst);
        self
    }

    pub fn beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn trial(mut self, trial: usize) -> Self {
        self.trial = Some(trial);
        self
    }

    pub fn trials(mut self, trials: usize) -> Self {
        self.trials = Some(trials);
        self
    }

    pub fn overflow(mut self, overflow: usize) -> Self {
        self.overflow = Some(overflow);
        self
    }

    pub fn std_error(mut self, se: f64) -> Self {
        self.std_error = Some(se);
        self
    }

    pub fn bounds(mut self, lower: f64, upper: f64) -> Self {
        self.lower = Some(lower);
        self.upper = Some(upper);
        self
    }

    pub fn status(mut self, status: &str) -> Self {
        self.status = status.to_string();
        self
    }

    /// Stores `v`; non-finite values are written as an empty cell with
    /// status `overflow` (or `nan`), never as text like `inf`.
    pub fn value(mut self, v: f64) -> Self {
        if v.is_finite() {
            self.value = Some(v);
        } else {
            self.value = None;
            if self.status.is_empty() {
                self.status = if v.is_nan() { "nan" } else { "overflow" }.to_string();
            }
        }
        self
    }
}

fn num(v: Option<f64>) -> String {
    v.filter(|v| v.is_finite()).map_or_else(String::new, |v| format!("{v:.16e}"))
}

fn int(v: Option<usize>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Header plus one line per record, `\n`-terminated, 17 significant digits.
pub fn to_csv(fingerprint: &str, experiment: &str, records: &[Record]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(COLUMNS).expect("writing to memory");
    for r in records {
        w.write_record([
            fingerprint.to_string(),
            experiment.to_string(),
            r.quantity.clone(),
            int(r.depth),
            num(r.hurst),
            num(r.beta),
            int(r.trial),
            r.statistic.clone(),
            num(r.value),
            num(r.std_error),
            num(r.lower),
            num(r.upper),
            int(r.trials),
            int(r.overflow),
            r.status.clone(),
        ])
        .expect("writing to memory");
    }
    let bytes = w.into_inner().expect("flushing to memory");
    String::from_utf8(bytes).expect("fields are UTF-8")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub fingerprint: String,
    pub seed: u64,
    pub version: String,
    pub core_version: String,
    pub platform: String,
    pub workers: usize,
    pub rows: usize,
    pub wall_time_seconds: f64,
    pub results: String,
}

pub fn write_outputs(dir: &Path, csv: &str, manifest: &Manifest) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let csv_path = dir.join("results.csv");
    std::fs::write(&csv_path, csv).with_context(|| format!("cannot write {}", csv_path.display()))?;
    let man_path = dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    std::fs::write(&man_path, json).with_context(|| format!("cannot write {}", man_path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let rows = vec![
            Record::new("output_ratio", "value").depth(10).beta(0.5).trial(0).value(1.25),
            Record::new("output_ratio", "value").depth(10).beta(0.5).trial(1).value(f64::INFINITY),
        ];
        let csv = to_csv("abc", "norms", &rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], COLUMNS.join(","));
        assert_eq!(
            lines[1],
            "abc,norms,output_ratio,10,,5.0000000000000000e-1,0,value,1.2500000000000000e0,,,,,,"
        );
        assert_eq!(lines[2], "abc,norms,output_ratio,10,,5.0000000000000000e-1,1,value,,,,,,,overflow");
        assert!(!csv.contains("inf") && !csv.contains("NaN") && !csv.contains('\r'));
        assert_eq!(lines[1].split(',').count(), COLUMNS.len());
    }

    #[test]
    fn seventeen_significant_digits_round_trip() {
        let v = 0.1 + 0.2;
        let csv = to_csv("x", "y", &[Record::new("q", "s").value(v)]);
        let cell = csv.lines().nth(1).unwrap().split(',').nth(8).unwrap();
        assert_eq!(cell.parse::<f64>().unwrap(), v);
    }
}
