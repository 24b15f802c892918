//! Error type shared across the crate.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error at line {line} ({path}): {msg}")]
    Schema {
        line: usize,
        path: String,
        msg: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dangling instance link: node {node} points at token {token} (sentence has {len} tokens)")]
    DanglingInstance {
        node: String,
        token: usize,
        len: usize,
    },

    #[error("cycle detected at edge {src} -> {dst}")]
    Cycle { src: String, dst: String },

    #[error("coindex {coindex} carries conflicting labels: {a:?} vs {b:?}")]
    LabelConflict {
        coindex: usize,
        a: String,
        b: String,
    },

    #[error("malformed sequence at position {position}: {msg}")]
    MalformedSequence { position: usize, msg: String },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("parameter {name} has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        found: (usize, usize),
        expected: (usize, usize),
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
