//! CSV tables for training and policy-optimization logs.

use std::path::Path;

use rmlab::diagnostics::REPORT_VALUE_NAMES;
use rmlab::rloosim::RlooRunLog;
use rmlab::trainkit::MetricsLog;

use crate::error::{CliError, Result};

pub const METRICS_CSV: &str = "metrics.csv";
pub const RLOO_CSV: &str = "rloo_metrics.csv";

pub fn metrics_header() -> Vec<&'static str> {
    let mut cols = vec!["step", "epoch", "train_loss", "head_norm"];
    cols.extend(REPORT_VALUE_NAMES);
    cols.extend(["learning_rate", "decomposition_error"]);
    cols
}

pub const RLOO_HEADER: [&str; 9] = [
    "step",
    "proxy_reward_mean",
    "gold_reward_mean",
    "kl",
    "entropy",
    "lr",
    "expected_proxy",
    "expected_gold",
    "max_advantage_sum",
];

fn num(v: f64) -> String {
    format!("{v}")
}

/// Renders a training log. Records without evaluation values leave those
/// cells empty.
pub fn metrics_csv(log: &MetricsLog) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(metrics_header())?;
    for r in &log.records {
        let mut row = vec![r.step.to_string(), r.epoch.to_string(), num(r.train_loss), num(r.head_norm)];
        for name in REPORT_VALUE_NAMES {
            let v = r.extra.iter().find(|(k, _)| k == name).map(|(_, v)| *v);
            row.push(v.map(num).unwrap_or_default());
        }
        row.push(num(r.learning_rate));
        row.push(num(r.decomposition_error));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn rloo_csv(log: &RlooRunLog) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RLOO_HEADER)?;
    for r in &log.records {
        w.write_record([
            r.step.to_string(),
            num(r.proxy_reward_mean),
            num(r.gold_reward_mean),
            num(r.kl),
            num(r.entropy),
            num(r.lr),
            num(r.expected_proxy),
            num(r.expected_gold),
            num(r.max_advantage_sum),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

/// A numeric CSV read back for plotting; empty cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse::<f64>()
                            .map(Some)
                            .map_err(|_| CliError::Runtime(format!("{}: bad number '{c}'", path.display())))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r.get(i).copied().flatten()).collect())
    }

    /// `(x, y)` points of `y_col` against `x_col`, skipping empty cells.
    pub fn points(&self, x_col: &str, y_col: &str) -> Vec<(f64, f64)> {
        match (self.column(x_col), self.column(y_col)) {
            (Some(xs), Some(ys)) => xs
                .into_iter()
                .zip(ys)
                .filter_map(|(x, y)| Some((x?, y?)))
                .collect(),
            _ => Vec::new(),
        }
    }
}
