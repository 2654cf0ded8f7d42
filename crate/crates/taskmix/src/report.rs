//! Report rendering and emission.
//!
//! Every run produces three files in its output directory:
//!
//! - `report.json` — the full [`RunReport`], machine-readable; the timestamp
//!   in `metadata` is the only non-deterministic byte.
//! - `tables.md` — a markdown table (method rows, per-task cells, Avg., Num.,
//!   Overhead) with qualified cells in bold.
//! - `curves.csv` — learning curves: `step,task_id,split,metric`.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::metrics::RunReport;
use crate::trainer::CurvePoint;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse report {path}: {source}")]
    BadReport {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// One rendered table row.
pub struct TableRow {
    pub method: String,
    /// `(score, qualified)` per task, aligned with the header's task order.
    pub cells: Vec<(f64, bool)>,
    pub avg: f64,
    pub num: usize,
    pub overhead: Option<f64>,
}

fn format_metric(value: f64) -> String {
    format!("{:.2}", value * 100.0)
}

/// "100%" for the single-task convention, "-" when undefined, otherwise one
/// decimal (e.g. "20.0%", "9.1%").
pub fn format_overhead(overhead: Option<f64>) -> String {
    match overhead {
        None => "-".to_string(),
        Some(o) if o == 1.0 => "100%".to_string(),
        Some(o) => format!("{:.1}%", o * 100.0),
    }
}

/// Renders method rows against a task header; qualified cells are bold.
pub fn render_table(task_ids: &[String], rows: &[TableRow]) -> String {
    let mut out = String::new();
    out.push_str("| Methods |");
    for id in task_ids {
        out.push_str(&format!(" {id} |"));
    }
    out.push_str(" Avg. | Num. | Overhead |\n");
    out.push_str("|---|");
    for _ in task_ids {
        out.push_str("---|");
    }
    out.push_str("---|---|---|\n");
    for row in rows {
        out.push_str(&format!("| {} |", row.method));
        for (score, qualified) in &row.cells {
            if *qualified {
                out.push_str(&format!(" **{}** |", format_metric(*score)));
            } else {
                out.push_str(&format!(" {} |", format_metric(*score)));
            }
        }
        out.push_str(&format!(
            " {} | {} | {} |\n",
            format_metric(row.avg),
            row.num,
            format_overhead(row.overhead)
        ));
    }
    out
}

/// Single-task baseline row: one model per task, every cell qualified.
pub fn single_task_row(report: &RunReport) -> TableRow {
    let cells: Vec<(f64, bool)> = report
        .tasks
        .iter()
        .map(|t| (t.single_task_baseline, true))
        .collect();
    let avg = cells.iter().map(|(s, _)| s).sum::<f64>() / cells.len() as f64;
    TableRow {
        method: "single_task".into(),
        num: cells.len(),
        overhead: Some(1.0),
        cells,
        avg,
    }
}

pub fn method_row(report: &RunReport) -> TableRow {
    TableRow {
        method: report.metadata.method.clone(),
        cells: report
            .tasks
            .iter()
            .map(|t| (t.multi_task_score, t.qualified))
            .collect(),
        avg: report.macro_avg,
        num: report.num_qualified,
        overhead: report.overhead,
    }
}

/// The per-run markdown document: baseline row plus the method row.
pub fn render_report_markdown(report: &RunReport) -> String {
    let task_ids: Vec<String> = report.tasks.iter().map(|t| t.task_id.clone()).collect();
    let rows = vec![single_task_row(report), method_row(report)];
    let mut doc = render_table(&task_ids, &rows);
    doc.push('\n');
    doc.push_str(&format!(
        "Qualified cells (bold) reach 99% of the single-task baseline. \
         Overhead is models per qualified task; taxonomy rule: {}, seed: {}.\n",
        report.metadata.taxonomy_rule, report.metadata.seed
    ));
    doc
}

pub fn curves_to_csv(curves: &[CurvePoint]) -> String {
    let mut out = String::from("step,task_id,split,metric\n");
    for p in curves {
        out.push_str(&format!("{},{},{},{}\n", p.step, p.task_id, p.split, p.metric));
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<(), ReportError> {
    fs::write(path, contents).map_err(|e| ReportError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes `report.json`, `tables.md` and `curves.csv` into `dir`, creating it
/// if needed. Reruns overwrite deterministically (timestamp aside).
pub fn emit_report(
    report: &RunReport,
    curves: &[CurvePoint],
    dir: &Path,
) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(|e| ReportError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    write(&dir.join("report.json"), &json)?;
    write(&dir.join("tables.md"), &render_report_markdown(report))?;
    write(&dir.join("curves.csv"), &curves_to_csv(curves))?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<RunReport, ReportError> {
    let body = fs::read_to_string(path).map_err(|e| ReportError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&body).map_err(|e| ReportError::BadReport {
        path: path.to_path_buf(),
        source: e,
    })
}
