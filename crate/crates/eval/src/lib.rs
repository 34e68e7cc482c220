//! Forget/retain evaluation across task formats.
//!
//! Tasks come in four formats: plain QA, fill-in-the-blank, multiple
//! choice (scored on the label token), and character-by-character answers
//! that force subtoken ids. The metric throughout is the joint probability
//! of the reference answer given the prompt; reports aggregate pooled
//! means per (split, format) cell and compare against baselines as signed
//! relative changes.

pub mod error;
pub mod prob;
pub mod report;
pub mod sweep;
pub mod task;

pub use error::{EvalError, Result};
pub use prob::{answer_probability, answer_token_ids, mcp_render, EvalOptions};
pub use report::{
    aggregate, cell_means, format_change, relative_change, Cell, CellChange, EvalReport,
    TaskResult,
};
pub use sweep::{layer_sweep, SweepReport, SweepRow};
pub use task::{parse_tasks, read_tasks, EvalTask, Split, TaskFormat};
