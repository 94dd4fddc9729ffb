//! Scenario-driven campaigns over the dynamic-inference testbed.

pub mod report;
pub mod runner;
pub mod scenario;
pub mod selftest;

pub use report::{emit_report, merge_csv, read_csv, Record, ReportFormat, Row, RunReport};
pub use runner::run_scenario;
pub use scenario::{load_scenario, Scenario};

/// Failures split by exit code: validation problems exit 1, everything else 2.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("run failed: {0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn invalid(field: &str, reason: impl std::fmt::Display) -> Self {
        HarnessError::Validation(format!("{field}: {reason}"))
    }

    /// Core errors raised while checking a scenario.
    pub fn from_core(e: dynattack_core::Error) -> Self {
        match e {
            dynattack_core::Error::Validation { field, reason } => HarnessError::invalid(&field, reason),
            other => HarnessError::Validation(other.to_string()),
        }
    }

    pub fn context(self, ctx: &str) -> Self {
        match self {
            HarnessError::Validation(m) => HarnessError::Validation(format!("{ctx}: {m}")),
            HarnessError::Runtime(m) => HarnessError::Runtime(format!("{ctx}: {m}")),
            HarnessError::Io(m) => HarnessError::Io(format!("{ctx}: {m}")),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) => 1,
            HarnessError::Runtime(_) | HarnessError::Io(_) => 2,
        }
    }
}
