//! Error-to-exit-code mapping.
//!
//! 1 usage, 2 io/parse, 3 empty covariance, 4 probe failure,
//! 5 numeric failure, 6 report comparison mismatch.

use rocr_edit::EditError;
use rocr_eval::EvalError;
use rocr_model::ModelError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Model(ModelError),
    Edit(EditError),
    Eval(EvalError),
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Model(e) => write!(f, "{e}"),
            CliError::Edit(e) => write!(f, "{e}"),
            CliError::Eval(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "io error on {path}: {source}"),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Model(e)
    }
}

impl From<EditError> for CliError {
    fn from(e: EditError) -> Self {
        CliError::Edit(e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Eval(e)
    }
}

fn edit_code(e: &EditError) -> i32 {
    match e {
        EditError::EmptyCovariance => 3,
        EditError::Probe(_) => 4,
        EditError::Numeric(_) | EditError::Optimization(_) | EditError::Oracle(_)
        | EditError::Shape(_) => 5,
        EditError::Config(_) | EditError::Layer { .. } => 1,
        EditError::Model(_) | EditError::Io { .. } | EditError::Format(_) => 2,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Model(_) | CliError::Io { .. } => 2,
            CliError::Edit(e) => edit_code(e),
            CliError::Eval(e) => match e {
                EvalError::Comparison(_) => 6,
                EvalError::Edit(inner) => edit_code(inner),
                _ => 2,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Model(_) => "model",
            CliError::Edit(_) => "edit",
            CliError::Eval(_) => "eval",
            CliError::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
