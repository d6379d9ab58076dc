//! Configuration files, CSV tables, JSON reports and the command pipelines
//! behind the `nlstab` binary.
//!
//! Every command returns a [`RunOutput`]: an exit [`Status`], the report tree
//! and an optional CSV table. Writing them out is left to the caller, so the
//! pipelines can be exercised without touching the filesystem.

pub mod config;
pub mod report;
pub mod run;
pub mod tables;

use serde_json::{Map, Value};
use thiserror::Error;

pub use config::{ConfigError, RunConfig};
pub use run::{run_analyze, run_section, run_simulate, run_synthesize};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OBSTRUCTION: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const NUMERIC: i32 = 3;
}

/// Failures that stop a command before it produces output.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("usage: {0}")]
    Usage(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Io(_) => exit::USAGE,
            CliError::Numeric(_) => exit::NUMERIC,
        }
    }

    pub(crate) fn numeric(e: impl std::fmt::Display) -> Self {
        CliError::Numeric(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// A structural obstruction: incomplete table, no feedback, unstable loop.
    Obstruction,
    /// Output was produced, but the computation ended early.
    NumericFailure,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => exit::OK,
            Status::Obstruction => exit::OBSTRUCTION,
            Status::NumericFailure => exit::NUMERIC,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub status: Status,
    /// Report tree without `meta.timestamp`.
    pub report: Map<String, Value>,
    /// CSV text, header included.
    pub table: Option<String>,
    /// Human-readable lines for the terminal.
    pub summary: Vec<String>,
}

impl RunOutput {
    /// Pretty JSON with `meta.timestamp` set; keys are sorted.
    pub fn report_json(&self, timestamp: u64) -> String {
        let mut report = self.report.clone();
        let meta = report.entry("meta").or_insert_with(|| Value::Object(Map::new()));
        if let Value::Object(m) = meta {
            m.insert("timestamp".into(), Value::from(timestamp));
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(report)).expect("report serializes");
        text.push('\n');
        text
    }
}
