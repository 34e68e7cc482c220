//! Error type for model loading and execution.

use thiserror::Error;

/// Errors produced while loading or running a model.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("tensor container format error: {0}")]
    Format(String),

    #[error("missing tensor `{name}`")]
    MissingTensor { name: String },

    #[error("tensor `{name}` has shape {got:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("tensor `{name}` contains a non-finite value at flat index {index}")]
    Corruption { name: String, index: usize },

    #[error("invalid tokenizer: {0}")]
    Tokenizer(String),

    #[error("unknown token `{token}`")]
    UnknownToken { token: String },

    #[error("empty input sequence")]
    EmptyInput,

    #[error("sequence length {len} exceeds max_seq_len {max}")]
    Length { len: usize, max: usize },

    #[error("{what} index {index} out of range (max {max})")]
    Index {
        what: &'static str,
        index: usize,
        max: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl ModelError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, ModelError>;
