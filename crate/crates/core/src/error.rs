use thiserror::Error;

/// Errors produced by the pipeline crates.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Load { line: usize, msg: String },

    #[error("malformed query: {0}")]
    MalformedQuery(String),

    #[error("logic form error: {0}")]
    LogicForm(String),

    #[error("logic form syntax error at line {line}, column {col}: {msg}")]
    LogicFormSyntax { line: usize, col: usize, msg: String },

    #[error("unresolved entity surface: [{0}]")]
    UnresolvedEntity(String),

    #[error("provider error ({endpoint}): {msg}")]
    Provider { endpoint: String, msg: String },

    #[error("empty completion from provider")]
    EmptyCompletion,

    #[error("config error: {0}")]
    Config(String),

    #[error("oracle refused: graph has {nodes} nodes, cap is {cap}")]
    OracleCap { nodes: usize, cap: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
