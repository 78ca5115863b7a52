//! Cross-run comparison: reads a directory of trace CSVs, groups them by
//! (algorithm, gamma), and tabulates final rolling accuracy, rise time, and
//! final training loss, plus pairwise accuracy deltas between groups.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{read_trace, TraceRow};
use crate::metrics;

/// Identity of one run, recovered from its file stem
/// (`fsl_g0p5_seed3.csv`, `fedavg_seed1.csv`, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct RunKey {
    pub algorithm: String,
    pub gamma: Option<f64>,
    pub seed: u64,
}

impl RunKey {
    /// Group label, e.g. `fsl(g=0.5)` or `fedavg`.
    pub fn group_label(&self) -> String {
        match self.gamma {
            Some(g) => format!("{}(g={})", self.algorithm, g),
            None => self.algorithm.clone(),
        }
    }
}

fn parse_gamma_tag(tag: &str) -> Option<f64> {
    tag.replace('p', ".").replace('m', "-").parse().ok()
}

/// Parses a trace file stem produced by the harness.
pub fn parse_stem(stem: &str) -> Option<RunKey> {
    let (head, seed_part) = stem.rsplit_once("_seed")?;
    let seed: u64 = seed_part.parse().ok()?;
    match head.rsplit_once("_g") {
        Some((alg, gamma_tag)) if !alg.is_empty() => {
            let gamma = parse_gamma_tag(gamma_tag)?;
            Some(RunKey { algorithm: alg.to_string(), gamma: Some(gamma), seed })
        }
        _ => {
            if head.is_empty() {
                None
            } else {
                Some(RunKey { algorithm: head.to_string(), gamma: None, seed })
            }
        }
    }
}

/// One (algorithm, gamma) row of the comparison table.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GroupRow {
    pub label: String,
    pub algorithm: String,
    pub gamma: Option<f64>,
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub final_train_loss: f64,
    pub final_rolling_acc: Option<f64>,
    pub rise_time: Option<f64>,
}

/// Pairwise difference in final rolling accuracy between two groups.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DeltaRow {
    pub a: String,
    pub b: String,
    pub final_acc_delta: Option<f64>,
    pub rise_time_delta: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CompareReport {
    pub groups: Vec<GroupRow>,
    pub deltas: Vec<DeltaRow>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Builds the comparison from already-parsed traces.
pub fn compare_traces(traces: &[(RunKey, Vec<TraceRow>)]) -> Result<CompareReport> {
    if traces.len() < 2 {
        return Err(Error::ReportMismatch {
            reason: format!("need at least 2 traces to compare, got {}", traces.len()),
        });
    }
    let rounds = traces[0].1.len();
    for (key, rows) in traces {
        if rows.len() != rounds {
            return Err(Error::ReportMismatch {
                reason: format!(
                    "trace {} has {} rounds, expected {}",
                    key.group_label(),
                    rows.len(),
                    rounds
                ),
            });
        }
    }

    // group by (algorithm, gamma) preserving first-appearance order
    let mut groups: Vec<(RunKey, Vec<&(RunKey, Vec<TraceRow>)>)> = Vec::new();
    for entry in traces {
        let (key, _) = entry;
        match groups
            .iter_mut()
            .find(|(k, _)| k.algorithm == key.algorithm && k.gamma == key.gamma)
        {
            Some((_, members)) => members.push(entry),
            None => groups.push((key.clone(), vec![entry])),
        }
    }
    groups.sort_by(|(a, _), (b, _)| {
        a.algorithm
            .cmp(&b.algorithm)
            .then(a.gamma.partial_cmp(&b.gamma).unwrap_or(std::cmp::Ordering::Equal))
    });

    let mut rows = Vec::with_capacity(groups.len());
    for (key, members) in &groups {
        let seeds: Vec<u64> = members.iter().map(|(k, _)| k.seed).collect();
        let losses: Vec<f64> = members
            .iter()
            .map(|(_, t)| t.last().map(|r| r.train_loss).unwrap_or(f64::NAN))
            .collect();
        let accs: Vec<Option<f64>> =
            members.iter().map(|(_, t)| t.last().and_then(|r| r.rolling_acc)).collect();
        let final_rolling_acc = if accs.iter().all(|a| a.is_some()) {
            Some(mean(&accs.iter().map(|a| a.unwrap()).collect::<Vec<_>>()))
        } else {
            None
        };
        let rises: Vec<Option<usize>> = members
            .iter()
            .map(|(_, t)| {
                let rolling: Vec<f64> = t.iter().filter_map(|r| r.rolling_acc).collect();
                metrics::rise_time(&rolling)
            })
            .collect();
        let rise_present: Vec<f64> = rises.iter().flatten().map(|&t| t as f64).collect();
        let rise_time = if rise_present.len() == rises.len() && !rises.is_empty() {
            Some(mean(&rise_present))
        } else {
            None
        };
        rows.push(GroupRow {
            label: key.group_label(),
            algorithm: key.algorithm.clone(),
            gamma: key.gamma,
            seeds,
            rounds,
            final_train_loss: mean(&losses),
            final_rolling_acc,
            rise_time,
        });
    }

    let mut deltas = Vec::new();
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let (a, b) = (&rows[i], &rows[j]);
            deltas.push(DeltaRow {
                a: a.label.clone(),
                b: b.label.clone(),
                final_acc_delta: match (a.final_rolling_acc, b.final_rolling_acc) {
                    (Some(x), Some(y)) => Some(x - y),
                    _ => None,
                },
                rise_time_delta: match (a.rise_time, b.rise_time) {
                    (Some(x), Some(y)) => Some(x - y),
                    _ => None,
                },
            });
        }
    }

    Ok(CompareReport { groups: rows, deltas })
}

/// Reads every parseable trace CSV in `dir` and compares them.
pub fn compare_dir(dir: &Path) -> Result<CompareReport> {
    let mut names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".csv") {
            names.push(name);
        }
    }
    names.sort();
    let mut traces = Vec::new();
    for name in names {
        let stem = name.trim_end_matches(".csv");
        if let Some(key) = parse_stem(stem) {
            traces.push((key, read_trace(&dir.join(&name))?));
        }
    }
    compare_traces(&traces)
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    }
}

/// Renders the comparison as a fixed-width text table.
pub fn render_table(report: &CompareReport) -> String {
    let mut out = String::new();
    let label_w = report
        .groups
        .iter()
        .map(|g| g.label.len())
        .chain(report.deltas.iter().map(|d| d.a.len() + d.b.len() + 3))
        .max()
        .unwrap_or(8)
        .max(8);
    out.push_str(&format!(
        "{:<label_w$}  {:>5}  {:>10}  {:>9}  {:>16}\n",
        "group", "seeds", "final_acc", "rise", "final_train_loss"
    ));
    for g in &report.groups {
        out.push_str(&format!(
            "{:<label_w$}  {:>5}  {:>10}  {:>9}  {:>16.6}\n",
            g.label,
            g.seeds.len(),
            fmt_cell(g.final_rolling_acc),
            fmt_cell(g.rise_time),
            g.final_train_loss,
        ));
    }
    if !report.deltas.is_empty() {
        out.push('\n');
        out.push_str(&format!(
            "{:<label_w$}  {:>10}  {:>9}\n",
            "delta (a - b)", "final_acc", "rise"
        ));
        for d in &report.deltas {
            out.push_str(&format!(
                "{:<label_w$}  {:>10}  {:>9}\n",
                format!("{} - {}", d.a, d.b),
                fmt_cell(d.final_acc_delta),
                fmt_cell(d.rise_time_delta),
            ));
        }
    }
    out
}
