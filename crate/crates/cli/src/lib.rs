//! Command-line front end and HTTP service for the npcsmith pipeline.

pub mod args;
pub mod commands;
pub mod http;

use std::fmt;

/// Process exit status. Stable across subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    /// The input or the generated content broke a rule.
    Violation = 1,
    /// Bad usage, missing files or an unreachable provider.
    Environment = 2,
}

/// A failed command with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: ExitCode,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn violation(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: ExitCode::Violation,
            error: error.into(),
        }
    }

    pub fn environment(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: ExitCode::Environment,
            error: error.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CommandResult = Result<ExitCode, Failure>;
