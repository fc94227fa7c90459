//! Aggregation of finished runs into one table, plus charts of their logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifacts::{RlooMeta, RunMeta, RunReport, REPORT, RLOO_META, RM_META};
use crate::chart::{Line, LineChart};
use crate::error::{CliError, Result};
use crate::fsutil::{read_json, write_file};
use crate::records::{Table, METRICS_CSV, RLOO_CSV};

/// Population mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone)]
pub struct RunEntry {
    /// Directory relative to the scan root, `/`-separated.
    pub dir: String,
    pub meta: RunMeta,
    pub report: RunReport,
}

#[derive(Debug, Clone)]
pub struct RlooEntry {
    pub dir: String,
    pub meta: RlooMeta,
}

#[derive(Debug, Clone, Default)]
pub struct Scan {
    pub runs: Vec<RunEntry>,
    pub rloo: Vec<RlooEntry>,
}

impl Scan {
    pub fn is_empty(&self) -> bool {
        self.runs.is_empty() && self.rloo.is_empty()
    }
}

fn relative(root: &Path, dir: &Path) -> String {
    let rel = dir.strip_prefix(root).unwrap_or(dir);
    let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
    if parts.is_empty() {
        ".".into()
    } else {
        parts.join("/")
    }
}

fn walk(root: &Path, dir: &Path, scan: &mut Scan) -> Result<()> {
    if dir.join(RM_META).is_file() && dir.join(REPORT).is_file() {
        scan.runs.push(RunEntry {
            dir: relative(root, dir),
            meta: read_json(&dir.join(RM_META))?,
            report: read_json(&dir.join(REPORT))?,
        });
    }
    if dir.join(RLOO_META).is_file() {
        scan.rloo.push(RlooEntry {
            dir: relative(root, dir),
            meta: read_json(&dir.join(RLOO_META))?,
        });
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in subdirs {
        walk(root, &sub, scan)?;
    }
    Ok(())
}

/// Finds every training run and RLOO run under `root`, in path order.
pub fn scan(root: &Path) -> Result<Scan> {
    if !root.is_dir() {
        return Err(CliError::Missing(format!("directory {}", root.display())));
    }
    let mut s = Scan::default();
    walk(root, root, &mut s)?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub seeds: Vec<u64>,
    pub acc_id: MeanStd,
    pub tau_prompt: MeanStd,
    pub tau_response: MeanStd,
    pub tau_mutual: MeanStd,
    pub head_norm: MeanStd,
    /// `erank_eval - erank_train`.
    pub erank_delta: MeanStd,
    pub erank_abs_delta: MeanStd,
    pub hnorm_std_mutual: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlooRow {
    pub proxy: String,
    pub seeds: Vec<u64>,
    pub final_expected_gold: MeanStd,
    pub final_expected_proxy: MeanStd,
    pub final_kl: MeanStd,
}

/// How many matched seeds favour the candidate objective on one measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub seeds: Vec<u64>,
    pub wins: usize,
}

/// Seed-matched comparisons of `candidate` against `baseline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparisons {
    pub baseline: String,
    pub candidate: String,
    pub tau_mutual_higher: Tally,
    pub hnorm_std_mutual_lower: Tally,
    pub erank_gap_smaller: Tally,
    /// Final expected gold reward of the policy trained on the candidate
    /// proxy is at least that of the baseline proxy.
    pub rloo_gold_not_lower: Tally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub rloo: Vec<RlooRow>,
    pub comparisons: Option<Comparisons>,
}

pub const BASELINE: &str = "bt";
pub const CANDIDATE: &str = "bt-bsr";

fn tally<T>(base: &BTreeMap<u64, T>, cand: &BTreeMap<u64, T>, wins: impl Fn(&T, &T) -> bool) -> Tally {
    let seeds: Vec<u64> = base.keys().filter(|s| cand.contains_key(s)).copied().collect();
    let wins = seeds.iter().filter(|s| wins(&cand[s], &base[s])).count();
    Tally { seeds, wins }
}

pub fn summarize(scan: &Scan) -> Result<Summary> {
    let mut by_label: BTreeMap<String, BTreeMap<u64, &RunReport>> = BTreeMap::new();
    let mut kind_of = BTreeMap::new();
    for e in &scan.runs {
        let r = &e.report;
        kind_of.insert(r.label.clone(), r.loss.kind);
        if by_label.entry(r.label.clone()).or_default().insert(r.seed, r).is_some() {
            return Err(CliError::Config(format!("two runs of '{}' with seed {} (second at {})", r.label, r.seed, e.dir)));
        }
    }
    let mut labels: Vec<&String> = by_label.keys().collect();
    labels.sort_by_key(|l| (kind_of[*l], (*l).clone()));

    let rows = labels
        .iter()
        .map(|label| {
            let runs = &by_label[*label];
            let col = |f: &dyn Fn(&RunReport) -> f64| MeanStd::of(&runs.values().map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                label: (*label).clone(),
                seeds: runs.keys().copied().collect(),
                acc_id: col(&|r| r.diagnostics.eval.acc_id),
                tau_prompt: col(&|r| r.diagnostics.eval.tau_prompt),
                tau_response: col(&|r| r.diagnostics.eval.tau_response),
                tau_mutual: col(&|r| r.diagnostics.eval.tau_mutual),
                head_norm: col(&|r| r.diagnostics.head_norm),
                erank_delta: col(&|r| r.diagnostics.erank.delta),
                erank_abs_delta: col(&|r| r.diagnostics.erank.delta.abs()),
                hnorm_std_mutual: col(&|r| r.diagnostics.hidden_norms.mutual.std),
            }
        })
        .collect();

    let mut by_proxy: BTreeMap<String, BTreeMap<u64, &RlooMeta>> = BTreeMap::new();
    for e in &scan.rloo {
        let m = &e.meta;
        if by_proxy.entry(m.proxy.clone()).or_default().insert(m.seed, m).is_some() {
            return Err(CliError::Config(format!("two RLOO runs on '{}' with seed {} (second at {})", m.proxy, m.seed, e.dir)));
        }
    }
    let rloo = by_proxy
        .iter()
        .map(|(proxy, runs)| {
            let col = |f: &dyn Fn(&RlooMeta) -> f64| MeanStd::of(&runs.values().map(|m| f(m)).collect::<Vec<_>>());
            RlooRow {
                proxy: proxy.clone(),
                seeds: runs.keys().copied().collect(),
                final_expected_gold: col(&|m| m.final_expected_gold),
                final_expected_proxy: col(&|m| m.final_expected_proxy),
                final_kl: col(&|m| m.final_kl),
            }
        })
        .collect();

    let comparisons = match (by_label.get(BASELINE), by_label.get(CANDIDATE)) {
        (Some(base), Some(cand)) => {
            let empty = BTreeMap::new();
            let (rb, rc) = (
                by_proxy.get(BASELINE).unwrap_or(&empty),
                by_proxy.get(CANDIDATE).unwrap_or(&empty),
            );
            Some(Comparisons {
                baseline: BASELINE.into(),
                candidate: CANDIDATE.into(),
                tau_mutual_higher: tally(base, cand, |c, b| {
                    c.diagnostics.eval.tau_mutual > b.diagnostics.eval.tau_mutual
                }),
                hnorm_std_mutual_lower: tally(base, cand, |c, b| {
                    c.diagnostics.hidden_norms.mutual.std < b.diagnostics.hidden_norms.mutual.std
                }),
                erank_gap_smaller: tally(base, cand, |c, b| {
                    c.diagnostics.erank.delta.abs() < b.diagnostics.erank.delta.abs()
                }),
                rloo_gold_not_lower: tally(rb, rc, |c, b| c.final_expected_gold >= b.final_expected_gold),
            })
        }
        _ => None,
    };

    Ok(Summary { rows, rloo, comparisons })
}

fn cell(m: MeanStd) -> String {
    format!("{:.4}±{:.4}", m.mean, m.std)
}

impl Summary {
    /// Fixed-width text rendering for the terminal.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        if !self.rows.is_empty() {
            let _ = writeln!(
                s,
                "{:<22} {:>2}  {:<15} {:<15} {:<15} {:<15} {:<15} {:<15} {:<15}",
                "objective", "n", "acc_id", "tau_prompt", "tau_response", "tau_mutual", "head_norm", "erank_delta", "hnorm_std_mut"
            );
            for r in &self.rows {
                let _ = writeln!(
                    s,
                    "{:<22} {:>2}  {:<15} {:<15} {:<15} {:<15} {:<15} {:<15} {:<15}",
                    r.label,
                    r.seeds.len(),
                    cell(r.acc_id),
                    cell(r.tau_prompt),
                    cell(r.tau_response),
                    cell(r.tau_mutual),
                    cell(r.head_norm),
                    cell(r.erank_delta),
                    cell(r.hnorm_std_mutual)
                );
            }
        }
        if !self.rloo.is_empty() {
            let _ = writeln!(s, "\n{:<22} {:>2}  {:<15} {:<15} {:<15}", "rloo proxy", "n", "final_gold", "final_proxy", "final_kl");
            for r in &self.rloo {
                let _ = writeln!(
                    s,
                    "{:<22} {:>2}  {:<15} {:<15} {:<15}",
                    r.proxy,
                    r.seeds.len(),
                    cell(r.final_expected_gold),
                    cell(r.final_expected_proxy),
                    cell(r.final_kl)
                );
            }
        }
        if let Some(c) = &self.comparisons {
            let _ = writeln!(s, "\n{} vs {} over matched seeds:", c.candidate, c.baseline);
            for (name, t) in [
                ("tau_mutual higher", &c.tau_mutual_higher),
                ("hidden-norm std (mutual) lower", &c.hnorm_std_mutual_lower),
                ("|erank delta| smaller", &c.erank_gap_smaller),
                ("rloo final gold not lower", &c.rloo_gold_not_lower),
            ] {
                let _ = writeln!(s, "  {name}: {}/{}", t.wins, t.seeds.len());
            }
        }
        s
    }
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

/// Writes one SVG per logged series: `train_<column>.svg` with a line per
/// training run, and `rloo_<column>.svg` with a line per RLOO run. Returns
/// the files written.
pub fn write_charts(root: &Path, scan: &Scan, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut written = Vec::new();

    let mut emit = |prefix: &str, tables: Vec<(String, Table)>, skip: &[&str]| -> Result<()> {
        let Some((_, first)) = tables.first() else {
            return Ok(());
        };
        for col in first.header.iter().filter(|h| !skip.contains(&h.as_str())) {
            let lines = tables
                .iter()
                .map(|(group, t)| Line {
                    group: group.clone(),
                    points: t.points("step", col),
                })
                .collect();
            let chart = LineChart {
                title: format!("{prefix} {col}"),
                x_label: "step".into(),
                y_label: col.clone(),
                lines,
            };
            let path = out_dir.join(format!("{prefix}_{}.svg", sanitize(col)));
            write_file(&path, chart.render())?;
            written.push(path);
        }
        Ok(())
    };

    let train_tables = scan
        .runs
        .iter()
        .map(|e| Ok((e.report.label.clone(), Table::read(&root.join(&e.dir).join(METRICS_CSV))?)))
        .collect::<Result<Vec<_>>>()?;
    emit("train", train_tables, &["step", "epoch"])?;

    let rloo_tables = scan
        .rloo
        .iter()
        .map(|e| Ok((e.meta.proxy.clone(), Table::read(&root.join(&e.dir).join(RLOO_CSV))?)))
        .collect::<Result<Vec<_>>>()?;
    emit("rloo", rloo_tables, &["step"])?;

    Ok(written)
}
