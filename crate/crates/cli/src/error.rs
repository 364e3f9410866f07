use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTEGRATION: i32 = 3;

pub const ERROR_SCHEMA: &str = "klsim-error/1";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{message}")]
    Usage { field: Option<String>, message: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("integration failed in {} run(s): {summary}", failed.len())]
    Integration { failed: Vec<PathBuf>, summary: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] klsim_core::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Usage { field: Some(field.into()), message: message.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage { .. } | CliError::Parse { .. } => EXIT_USAGE,
            CliError::Integration { .. } => EXIT_INTEGRATION,
            CliError::Io { .. } | CliError::Core(_) => EXIT_FAILURE,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage { .. } => "usage",
            CliError::Parse { .. } => "parse",
            CliError::Integration { .. } => "integration",
            CliError::Io { .. } => "io",
            CliError::Core(_) => "internal",
        }
    }

    /// Machine-readable description written on failure.
    pub fn report(&self) -> ErrorReport {
        let (field, line, column, partial) = match self {
            CliError::Usage { field, .. } => (field.clone(), None, None, Vec::new()),
            CliError::Parse { line, column, .. } => (None, Some(*line), Some(*column), Vec::new()),
            CliError::Integration { failed, .. } => (
                None,
                None,
                None,
                failed.iter().map(|p| p.display().to_string()).collect(),
            ),
            _ => (None, None, None, Vec::new()),
        };
        ErrorReport {
            schema: ERROR_SCHEMA,
            kind: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
            field,
            line,
            column,
            partial_outputs: partial,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub schema: &'static str,
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub partial_outputs: Vec<String>,
}
