use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported construct: {0}")]
    Unsupported(String),

    #[error("AST schema violation: {0}")]
    Schema(String),

    #[error("node {node} lists child {child}, which does not exist")]
    DanglingChild { node: usize, child: usize },

    #[error("cycle detected through node {0}")]
    Cycle(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("vocabulary has {vocab} {what} but the embedding table has {table} rows")]
    VocabMismatch {
        what: &'static str,
        vocab: usize,
        table: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("shape mismatch for tensor `{name}`: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("program `{id}`: {source}")]
    Program {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_program(self, id: &str) -> Self {
        Error::Program {
            id: id.to_string(),
            source: Box::new(self),
        }
    }
}
