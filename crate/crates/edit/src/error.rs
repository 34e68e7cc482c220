//! Error type for probing and editing.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EditError {
    #[error(transparent)]
    Model(#[from] rocr_model::ModelError),

    #[error("probe failed: {0}")]
    Probe(String),

    #[error("covariance has no usable key positions")]
    EmptyCovariance,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer {layer} out of range (model has {max} layers)")]
    Layer { layer: usize, max: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("covariance file format error: {0}")]
    Format(String),

    #[error("oracle failed to converge: {0}")]
    Oracle(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("invalid edit configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, EditError>;
