//! Ablation reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numfmt::format_sig6;
use crate::{Error, Result};

pub const CSV_HEADER: &str = "dataset,arch,init,activation,n,trial,train_acc,test_acc,best_l2,wall_time_s";

/// One probe run. Metric fields are `None` when the cell failed, in which
/// case `error` says why.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub arch: String,
    pub init: String,
    pub activation: String,
    pub n: usize,
    pub trial: usize,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub best_l2: Option<f64>,
    pub wall_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Mean and sample standard deviation over the successful trials of a cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub arch: String,
    pub init: String,
    pub activation: String,
    pub n: usize,
    pub trials: usize,
    pub failures: usize,
    pub train_acc_mean: Option<f64>,
    pub train_acc_std: Option<f64>,
    pub test_acc_mean: Option<f64>,
    pub test_acc_std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: String,
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<Aggregate>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidArgument(format!("unknown report format `{other}`"))),
        }
    }
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

impl Report {
    /// Groups consecutive-or-not rows by `(arch, init, activation, n)` in
    /// order of first appearance.
    pub fn from_rows(dataset: String, rows: Vec<ReportRow>) -> Report {
        let mut keys: Vec<(String, String, String, usize)> = Vec::new();
        for r in &rows {
            let key = (r.arch.clone(), r.init.clone(), r.activation.clone(), r.n);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        let aggregates = keys
            .into_iter()
            .map(|(arch, init, activation, n)| {
                let cell: Vec<&ReportRow> = rows
                    .iter()
                    .filter(|r| r.arch == arch && r.init == init && r.activation == activation && r.n == n)
                    .collect();
                let train: Vec<f64> = cell.iter().filter_map(|r| r.train_acc).collect();
                let test: Vec<f64> = cell.iter().filter_map(|r| r.test_acc).collect();
                let (train_acc_mean, train_acc_std) = mean_std(&train);
                let (test_acc_mean, test_acc_std) = mean_std(&test);
                Aggregate {
                    trials: cell.len(),
                    failures: cell.iter().filter(|r| r.error.is_some()).count(),
                    arch,
                    init,
                    activation,
                    n,
                    train_acc_mean,
                    train_acc_std,
                    test_acc_mean,
                    test_acc_std,
                }
            })
            .collect();
        Report { dataset, rows, aggregates }
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(format_sig6).unwrap_or_else(|| "NA".into());
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let fields = [
                r.dataset.clone(),
                r.arch.clone(),
                r.init.clone(),
                r.activation.clone(),
                r.n.to_string(),
                r.trial.to_string(),
                opt(r.train_acc),
                opt(r.test_acc),
                opt(r.best_l2),
                opt(r.wall_time_s),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Report> {
        Ok(serde_json::from_str(text)?)
    }

    /// Aggregate for a cell, if present.
    pub fn aggregate(&self, arch: &str, n: usize) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.arch == arch && a.n == n)
    }
}

pub fn emit_report(report: &Report, format: ReportFormat, path: &Path) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::InvalidArgument("refusing to write an empty report".into()));
    }
    let text = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json()?,
    };
    std::fs::write(path, text)?;
    Ok(())
}
