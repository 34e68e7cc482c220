//! Evaluation tasks: one JSON object per line, four formats across the
//! forget and retain splits.

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Forget,
    Retain,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Forget => write!(f, "forget"),
            Split::Retain => write!(f, "retain"),
        }
    }
}

/// Task formats, ordered as reported: the two base formats, then the two
/// whose scored continuations avoid the answer's word-level tokens
/// (choice labels and per-character spelling).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskFormat {
    QA,
    FB,
    MCP,
    SQA,
}

impl std::fmt::Display for TaskFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskFormat::QA => write!(f, "QA"),
            TaskFormat::FB => write!(f, "FB"),
            TaskFormat::MCP => write!(f, "MCP"),
            TaskFormat::SQA => write!(f, "SQA"),
        }
    }
}

pub const MCP_LABELS: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalTask {
    pub id: String,
    pub split: Split,
    pub format: TaskFormat,
    pub prompt: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_label: Option<String>,
}

impl EvalTask {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(EvalError::Task("task id is empty".into()));
        }
        if self.prompt.is_empty() || self.answer.is_empty() {
            return Err(EvalError::Task(format!(
                "task `{}` has an empty prompt or answer",
                self.id
            )));
        }
        match self.format {
            TaskFormat::MCP => {
                if !(2..=6).contains(&self.choices.len()) {
                    return Err(EvalError::Task(format!(
                        "task `{}`: MCP needs 2..=6 choices, got {}",
                        self.id,
                        self.choices.len()
                    )));
                }
                let label = self.answer_label.as_deref().ok_or_else(|| {
                    EvalError::Task(format!("task `{}`: MCP needs answer_label", self.id))
                })?;
                let valid = &MCP_LABELS[..self.choices.len()];
                if !valid.contains(&label) {
                    return Err(EvalError::Task(format!(
                        "task `{}`: answer_label `{label}` not among {valid:?}",
                        self.id
                    )));
                }
            }
            _ => {
                if !self.choices.is_empty() || self.answer_label.is_some() {
                    return Err(EvalError::Task(format!(
                        "task `{}`: choices/answer_label only apply to MCP",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Parse a JSON Lines task file; errors carry the 1-based line number.
pub fn parse_tasks(text: &str) -> Result<Vec<EvalTask>> {
    let mut tasks = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let task: EvalTask = serde_json::from_str(trimmed).map_err(|e| EvalError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        task.validate().map_err(|e| EvalError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if !seen.insert(task.id.clone()) {
            return Err(EvalError::Parse {
                line: line_no,
                msg: format!("duplicate task id `{}`", task.id),
            });
        }
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn read_tasks(path: &std::path::Path) -> Result<Vec<EvalTask>> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_tasks(&text)
}
