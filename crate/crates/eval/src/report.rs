//! Aggregated evaluation reports and baseline comparison.
//!
//! A cell is one (split, format) pair; its value is the pooled mean of all
//! task probabilities in the cell, scaled by 100. Cells with no tasks are
//! omitted rather than reported as zero.

use serde::{Deserialize, Serialize};

use rocr_model::digest::digest_hex;
use rocr_model::ModelBundle;

use crate::error::{EvalError, Result};
use crate::prob::{answer_probability, EvalOptions};
use crate::task::{EvalTask, Split, TaskFormat};

pub const REPORT_SCHEMA: &str = "rocr.report.v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskResult {
    pub id: String,
    pub split: Split,
    pub format: TaskFormat,
    pub probability: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cell {
    pub split: Split,
    pub format: TaskFormat,
    /// Pooled mean probability of the cell's tasks, times 100.
    pub mean_pct: f64,
    pub n_tasks: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    /// How cell values pool over tasks.
    pub aggregation: String,
    pub model_digest: String,
    pub task_digest: String,
    pub tasks: Vec<TaskResult>,
    pub cells: Vec<Cell>,
}

impl EvalReport {
    /// Build a report directly from cell values, e.g. to compare numbers
    /// produced elsewhere. Task lists stay empty.
    pub fn from_cells(cells: Vec<Cell>) -> Self {
        EvalReport {
            schema: REPORT_SCHEMA.to_string(),
            aggregation: "pooled-mean".to_string(),
            model_digest: String::new(),
            task_digest: String::new(),
            tasks: Vec::new(),
            cells,
        }
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).unwrap()).map_err(|e| {
            EvalError::Io {
                path: path.display().to_string(),
                source: e,
            }
        })
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let report: EvalReport =
            serde_json::from_str(&text).map_err(|e| EvalError::Format(e.to_string()))?;
        if report.schema != REPORT_SCHEMA {
            return Err(EvalError::Format(format!(
                "unsupported report schema `{}`",
                report.schema
            )));
        }
        Ok(report)
    }
}

/// Pooled per-cell means over task results, in deterministic cell order.
pub fn cell_means(results: &[TaskResult]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for split in [Split::Forget, Split::Retain] {
        for format in [TaskFormat::QA, TaskFormat::FB, TaskFormat::MCP, TaskFormat::SQA] {
            let probs: Vec<f64> = results
                .iter()
                .filter(|r| r.split == split && r.format == format)
                .map(|r| r.probability)
                .collect();
            if probs.is_empty() {
                continue;
            }
            let mean = probs.iter().sum::<f64>() / probs.len() as f64;
            cells.push(Cell {
                split,
                format,
                mean_pct: mean * 100.0,
                n_tasks: probs.len(),
            });
        }
    }
    cells
}

/// Score every task and aggregate. Task order in the report follows the
/// input order; cells are keyed and sorted by (split, format).
pub fn aggregate(bundle: &ModelBundle, tasks: &[EvalTask], opts: EvalOptions) -> Result<EvalReport> {
    let mut results = Vec::with_capacity(tasks.len());
    for task in tasks {
        let probability = answer_probability(bundle, task, opts)?;
        results.push(TaskResult {
            id: task.id.clone(),
            split: task.split,
            format: task.format,
            probability,
        });
    }
    let cells = cell_means(&results);
    let task_digest = digest_hex(serde_json::to_string(tasks).unwrap().as_bytes());
    Ok(EvalReport {
        schema: REPORT_SCHEMA.to_string(),
        aggregation: "pooled-mean".to_string(),
        model_digest: bundle.digest(),
        task_digest,
        tasks: results,
        cells,
    })
}

/// Signed relative change of one cell between two reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellChange {
    pub split: Split,
    pub format: TaskFormat,
    pub before: f64,
    pub after: f64,
    /// (after - before) / before * 100; `None` marks an undefined cell
    /// (baseline exactly zero).
    pub change_pct: Option<f64>,
}

/// Per-cell relative change between two reports covering identical cells.
pub fn relative_change(before: &EvalReport, after: &EvalReport) -> Result<Vec<CellChange>> {
    let key = |c: &Cell| (c.split, c.format);
    let before_keys: Vec<_> = before.cells.iter().map(key).collect();
    let after_keys: Vec<_> = after.cells.iter().map(key).collect();
    if before_keys != after_keys {
        return Err(EvalError::Comparison(format!(
            "cell sets differ: {before_keys:?} vs {after_keys:?}"
        )));
    }
    Ok(before
        .cells
        .iter()
        .zip(&after.cells)
        .map(|(b, a)| CellChange {
            split: b.split,
            format: b.format,
            before: b.mean_pct,
            after: a.mean_pct,
            change_pct: if b.mean_pct == 0.0 {
                None
            } else {
                Some((a.mean_pct - b.mean_pct) / b.mean_pct * 100.0)
            },
        })
        .collect())
}

/// Render a change as the report tables print it, two decimals.
pub fn format_change(change: &CellChange) -> String {
    match change.change_pct {
        Some(pct) => format!("{pct:.2}%"),
        None => "n/a".to_string(),
    }
}
