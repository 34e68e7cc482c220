//! Single-layer edit sweep: clone, edit at one layer, evaluate, compare.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use rocr_edit::{run_edit, EditOptions, NullProjector};
use rocr_model::ModelBundle;

use crate::error::Result;
use crate::prob::EvalOptions;
use crate::report::{aggregate, relative_change, CellChange, EvalReport};
use crate::task::EvalTask;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub layer: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<CellChange>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub baseline: EvalReport,
    pub rows: Vec<SweepRow>,
}

/// For each layer: edit a clone of the model at that single layer and
/// report per-cell relative change against the unedited baseline. Errors
/// are recorded per layer; the sweep continues.
pub fn layer_sweep(
    bundle: &ModelBundle,
    base_opts: &EditOptions,
    layers: &[usize],
    projectors: &BTreeMap<usize, NullProjector>,
    tasks: &[EvalTask],
    eval_opts: EvalOptions,
) -> Result<SweepReport> {
    let baseline = aggregate(bundle, tasks, eval_opts)?;
    let mut rows = Vec::with_capacity(layers.len());
    for &layer in layers {
        let mut edited = bundle.clone();
        let mut opts = base_opts.clone();
        opts.layers = vec![layer];
        let outcome = run_edit(&mut edited, &opts, projectors, &BTreeMap::new())
            .map_err(|e| e.to_string())
            .and_then(|_| {
                aggregate(&edited, tasks, eval_opts).map_err(|e| e.to_string())
            })
            .and_then(|report| {
                relative_change(&baseline, &report).map_err(|e| e.to_string())
            });
        match outcome {
            Ok(cells) => rows.push(SweepRow {
                layer,
                cells: Some(cells),
                error: None,
            }),
            Err(msg) => rows.push(SweepRow {
                layer,
                cells: None,
                error: Some(msg),
            }),
        }
    }
    Ok(SweepReport { baseline, rows })
}
