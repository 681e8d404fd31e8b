use thiserror::Error;

use super::validate::Finding;

#[derive(Debug, Error)]
pub enum DmlError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unresolved {kind} `{name}` referenced by {context}")]
    Unresolved {
        kind: &'static str,
        name: String,
        context: String,
    },
    #[error("duplicate {kind} `{name}`")]
    Duplicate { kind: &'static str, name: String },
    #[error("{0}")]
    Invalid(String),
    #[error("unsupported field access `${0}` in template (API returns are opaque entities)")]
    FieldAccess(String),
    #[error("unsupported dml_version {0}")]
    Version(u32),
    #[error("dialogue {}: {finding}", .dialogue.as_deref().unwrap_or("<unnamed>"))]
    Dialogue {
        dialogue: Option<String>,
        finding: Finding,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DmlError {
    pub(crate) fn from_json(err: serde_json::Error) -> Self {
        DmlError::Syntax {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
