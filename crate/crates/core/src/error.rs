use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("index {index} at line {line} outside 1..={norb}")]
    Range {
        line: usize,
        index: i64,
        norb: usize,
    },

    #[error("conflicting values for {what} at line {line}: {old} vs {new}")]
    Consistency {
        line: usize,
        what: String,
        old: f64,
        new: f64,
    },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no convergence after {iterations} iterations (best estimate {best}, residual {residual:e})")]
    Convergence {
        iterations: usize,
        best: f64,
        residual: f64,
    },

    #[error("propagation diverged at t = {time} au (amplitude norm {norm:e})")]
    Divergence { time: f64, norm: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
