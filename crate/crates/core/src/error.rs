use std::io;

use thiserror::Error;

/// Every failure the engine can report. Variants map one-to-one onto the
/// error kinds named by the module contracts.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shortcut must point forward, got ({from} -> {to})")]
    ForwardViolation { from: usize, to: usize },
    #[error("unknown node index {index} (graph has {len} nodes)")]
    UnknownNode { index: usize, len: usize },
    #[error("missing annotation on node {index}: {what}")]
    MissingAnnotation { index: usize, what: &'static str },
    #[error("statistics corpus is empty")]
    EmptyCorpus,
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("provider error after {attempts} attempt(s) ({elapsed_seconds:.3}s): {message}")]
    Provider {
        message: String,
        attempts: u32,
        elapsed_seconds: f64,
    },
    #[error("script exhausted for role `{role}` at call {ordinal}")]
    ScriptUnderflow { role: String, ordinal: usize },
    #[error("environment error: {0}")]
    Environment(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("synthesis failed for pair ({from}, {to}): {message}")]
    Synthesis {
        from: usize,
        to: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
