//! Joint answer probability under teacher forcing.
//!
//! QA and FB score the answer's own tokens; MCP scores a single choice
//! label under a frozen rendering; SQA forces the answer out character by
//! character so the scored continuation ids differ from the word-level
//! tokens the answer would normally take.

use rocr_model::forward::{forward, CaptureSpec};
use rocr_model::{softmax, ModelBundle};

use crate::error::{EvalError, Result};
use crate::task::{EvalTask, TaskFormat, MCP_LABELS};

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Apply the model's prompt template to task prompts.
    pub use_template: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { use_template: true }
    }
}

/// Frozen multiple-choice rendering. The single space after the final
/// colon belongs to the prompt, so the scored continuation is exactly the
/// label token.
pub fn mcp_render(task: &EvalTask) -> String {
    let mut out = format!("Question: {}\nChoices:\n", task.prompt);
    for (i, choice) in task.choices.iter().enumerate() {
        out.push_str(&format!("{}) {}\n", MCP_LABELS[i], choice));
    }
    out.push_str("Answer: ");
    out
}

/// The forced continuation ids the task's answer is scored over.
pub fn answer_token_ids(bundle: &ModelBundle, task: &EvalTask) -> Result<Vec<u32>> {
    match task.format {
        TaskFormat::QA | TaskFormat::FB => {
            let ids = bundle.encode(&task.answer)?;
            if ids.is_empty() {
                return Err(EvalError::Task(format!(
                    "task `{}`: answer yields no tokens",
                    task.id
                )));
            }
            Ok(ids)
        }
        TaskFormat::MCP => {
            let label = task.answer_label.as_deref().expect("validated MCP");
            let ids = bundle.encode(label)?;
            if ids.len() != 1 {
                return Err(EvalError::Task(format!(
                    "task `{}`: MCP label `{label}` is not a single token",
                    task.id
                )));
            }
            Ok(ids)
        }
        TaskFormat::SQA => {
            let mut ids = Vec::new();
            for ch in task.answer.chars() {
                let piece = bundle.encode(&ch.to_string())?;
                if piece.is_empty() {
                    return Err(EvalError::Task(format!(
                        "task `{}`: character `{ch}` yields no token",
                        task.id
                    )));
                }
                ids.extend(piece);
            }
            Ok(ids)
        }
    }
}

fn prompt_text(bundle: &ModelBundle, task: &EvalTask, opts: EvalOptions) -> String {
    let raw = match task.format {
        TaskFormat::MCP => mcp_render(task),
        _ => task.prompt.clone(),
    };
    if opts.use_template {
        bundle.apply_template(&raw)
    } else {
        raw
    }
}

/// Joint probability of the task's answer given its prompt, in [0, 1].
pub fn answer_probability(
    bundle: &ModelBundle,
    task: &EvalTask,
    opts: EvalOptions,
) -> Result<f64> {
    task.validate()?;
    let prompt_ids = bundle.encode(&prompt_text(bundle, task, opts))?;
    if prompt_ids.is_empty() {
        return Err(EvalError::Task(format!(
            "task `{}`: prompt yields no tokens",
            task.id
        )));
    }
    let ans_ids = answer_token_ids(bundle, task)?;
    let total = prompt_ids.len() + ans_ids.len();
    if total > bundle.config.max_seq_len {
        return Err(EvalError::Length {
            len: total,
            max: bundle.config.max_seq_len,
        });
    }
    let mut ids = prompt_ids;
    let start = ids.len();
    ids.extend_from_slice(&ans_ids);
    let trace = forward(bundle, &ids, CaptureSpec::none())?;
    let mut p = 1.0;
    for (t, &tok) in ids.iter().enumerate().skip(start) {
        p *= softmax(&trace.logits[t - 1])[tok as usize];
    }
    Ok(p)
}
