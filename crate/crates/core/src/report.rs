//! Metrics reports: the JSON document written by evaluation runs and its
//! aligned text rendering.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eval::{EvalRecord, Skipped};
use crate::metrics::{float_or_inf, ThresholdFit};
use crate::model::{Benchmark, ConfusionCounts};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub detector: String,
    /// Trajectories the metrics cover.
    pub n: usize,
    pub confusion: ConfusionCounts,
    pub macro_f1: f64,
    pub cost: u64,
    pub er: f64,
    pub pr_auc: Option<f64>,
    pub ece: Option<f64>,
    #[serde(with = "float_or_inf::option")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<ThresholdFit>,
    /// Dev trajectory ids when the threshold was tuned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<Vec<String>>,
    /// Scored-detector records without a score (parse failures).
    pub unscored: usize,
    pub llm_calls: usize,
    pub records: Vec<EvalRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub benchmark: Benchmark,
    pub evaluated: usize,
    pub skipped: Skipped,
    pub detectors: Vec<DetectorReport>,
}

impl MetricsReport {
    /// Pretty JSON with a trailing newline; stable for identical inputs.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn read(path: &Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn table(&self) -> String {
        render_table(&self.detectors)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn threshold(v: Option<f64>) -> String {
    match v {
        None => "-".into(),
        Some(x) if x == f64::INFINITY => "inf".into(),
        Some(x) if x == f64::NEG_INFINITY => "-inf".into(),
        Some(x) => format!("{x:.4}"),
    }
}

/// One row per detector: Macro-F1, Cost, ER, PR-AUC, ECE, confusion counts
/// and threshold.
pub fn render_table(rows: &[DetectorReport]) -> String {
    let header = ["Method", "N", "Macro-F1", "Cost", "ER", "PR-AUC", "ECE", "TP", "FP", "FN", "TN", "Threshold"];
    let body: Vec<[String; 12]> = rows
        .iter()
        .map(|r| {
            [
                r.detector.clone(),
                r.n.to_string(),
                format!("{:.4}", r.macro_f1),
                r.cost.to_string(),
                format!("{:.4}", r.er),
                opt(r.pr_auc),
                opt(r.ece),
                r.confusion.tp.to_string(),
                r.confusion.fp.to_string(),
                r.confusion.fn_.to_string(),
                r.confusion.tn.to_string(),
                threshold(r.threshold),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let mut l = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                l.push_str("  ");
            }
            if i == 0 {
                let _ = write!(l, "{cell:<w$}");
            } else {
                let _ = write!(l, "{cell:>w$}");
            }
        }
        out.push_str(l.trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for row in &body {
        line(row.iter().map(String::as_str).collect());
    }
    out
}
