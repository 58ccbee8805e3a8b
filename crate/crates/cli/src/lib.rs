//! Driver for core-level spectral function runs: configuration, method
//! dispatch, artifact emission and cross-method comparison.

pub mod compare;
pub mod config;
pub mod run;

pub use compare::{compare, CompareOptions, ComparisonReport};
pub use config::{Method, RunConfig};
pub use run::{run_job, RunSummary};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or input data.
    Config(String),
    /// The numerics failed (non-convergence, divergence, capacity, …).
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<corehole::Error> for CliError {
    fn from(e: corehole::Error) -> Self {
        use corehole::Error as E;
        match e {
            E::Parse { .. } | E::Range { .. } | E::Consistency { .. } => {
                CliError::Config(e.to_string())
            }
            E::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub(crate) fn write_file(
    path: &std::path::Path,
    contents: impl AsRef<[u8]>,
) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub(crate) fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable artifact");
    s.push('\n');
    s
}
