//! Error type for evaluation.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] rocr_model::ModelError),

    #[error(transparent)]
    Edit(#[from] rocr_edit::EditError),

    #[error("task file line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid task: {0}")]
    Task(String),

    #[error("prompt plus answer is {len} tokens, exceeding max_seq_len {max}")]
    Length { len: usize, max: usize },

    #[error("reports are not comparable: {0}")]
    Comparison(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("report format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;
