use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{SweepConfig, TaskSpec};
use crate::baselines::Method;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: Method,
    pub k: usize,
    pub effective_k: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub f_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
    pub n_questions: usize,
}

/// Per `(method, k)` aggregate across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub median_accuracy: f64,
    pub q25_accuracy: f64,
    pub q75_accuracy: f64,
    pub median_f: Option<f64>,
}

impl SummaryRow {
    pub fn iqr(&self) -> f64 {
        self.q75_accuracy - self.q25_accuracy
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub task: TaskSpec,
    pub config: SweepConfig,
    pub cells: Vec<SweepCell>,
    pub summary: Vec<SummaryRow>,
}

/// Linear-interpolation quantile of unsorted data (`q` in `[0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty data");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

impl SweepReport {
    pub fn new(task: TaskSpec, config: SweepConfig, cells: Vec<SweepCell>) -> Self {
        let mut summary: Vec<SummaryRow> = Vec::new();
        for cell in &cells {
            if summary.iter().any(|r| r.method == cell.method && r.k == cell.k) {
                continue;
            }
            let group: Vec<&SweepCell> = cells
                .iter()
                .filter(|c| c.method == cell.method && c.k == cell.k)
                .collect();
            let acc: Vec<f64> = group.iter().map(|c| c.accuracy).collect();
            let fs: Vec<f64> = group.iter().filter_map(|c| c.f_mean).collect();
            summary.push(SummaryRow {
                method: cell.method,
                k: cell.k,
                seeds: group.iter().map(|c| c.seed).collect(),
                median_accuracy: quantile(&acc, 0.5),
                q25_accuracy: quantile(&acc, 0.25),
                q75_accuracy: quantile(&acc, 0.75),
                median_f: (!fs.is_empty()).then(|| quantile(&fs, 0.5)),
            });
        }
        SweepReport {
            task,
            config,
            cells,
            summary,
        }
    }

    pub fn row(&self, method: Method, k: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method && r.k == k)
    }

    /// Median accuracy per k for one method, in grid order.
    pub fn curve(&self, method: Method) -> Vec<(usize, f64)> {
        self.summary
            .iter()
            .filter(|r| r.method == method)
            .map(|r| (r.k, r.median_accuracy))
            .collect()
    }
}

/// One cell per line.
pub fn write_jsonl<W: Write>(report: &SweepReport, mut out: W) -> Result<()> {
    for cell in &report.cells {
        serde_json::to_writer(&mut out, cell)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_csv<W: Write>(report: &SweepReport, mut out: W) -> Result<()> {
    writeln!(
        out,
        "method,k,effective_k,seed,accuracy,f_mean,runtime_ms,n_questions"
    )?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in &report.cells {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.method,
            c.k,
            c.effective_k,
            c.seed,
            c.accuracy,
            opt(c.f_mean),
            opt(c.runtime_ms),
            c.n_questions
        )?;
    }
    Ok(())
}

pub fn render_table(report: &SweepReport) -> String {
    let mut s = String::new();
    let t = &report.task;
    let _ = writeln!(
        s,
        "task: n={} m={} eps={} beta={} seed={}  strategy={}  seeds={}",
        t.n_questions,
        t.answer_vocab,
        t.error_rate,
        t.copy_weight,
        t.seed,
        report.config.strategy,
        report.config.seeds.len()
    );
    let _ = writeln!(
        s,
        "{:<8} {:>4} {:>8} {:>8} {:>8}",
        "method", "k", "acc", "iqr", "F"
    );
    for r in &report.summary {
        let f = r.median_f.map_or_else(|| "-".to_string(), |f| format!("{f:.3}"));
        let _ = writeln!(
            s,
            "{:<8} {:>4} {:>8.3} {:>8.3} {:>8}",
            r.method.name(),
            r.k,
            r.median_accuracy,
            r.iqr(),
            f
        );
    }
    s
}
