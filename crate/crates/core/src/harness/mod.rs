//! Scenario orchestration: the discrete-event loop, the experiments built on
//! it, and their file outputs.

pub mod engine;
pub mod experiments;
pub mod output;
pub mod scenario;

use thiserror::Error;

pub use engine::{run, run_with_observer, RunOutput, VoltageLog};
pub use experiments::{
    experiment_allan, experiment_beat, experiment_drift, experiment_tune, AllanReport, BeatReport,
    BeatRun, DriftOutcome,
};
pub use scenario::{ChannelConfig, Issue, Scenario};

use crate::analysis::AnalysisError;
use crate::laser::LaserError;
use crate::noise::NoiseError;
use crate::servo::ServoError;
use crate::wavemeter::WavemeterError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario:\n{}", format_issues(.0))]
    Validation(Vec<Issue>),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

fn format_issues(issues: &[Issue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl HarnessError {
    pub(crate) fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Validation(vec![Issue {
            path: path.into(),
            message: message.into(),
        }])
    }

    /// Process exit status: 2 for bad input, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Parse(_) | HarnessError::Validation(_) => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Io(_) => 1,
        }
    }
}

macro_rules! numerical_from {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Numerical(e.to_string())
            }
        }
    )*};
}

numerical_from!(
    AnalysisError,
    LaserError,
    NoiseError,
    ServoError,
    WavemeterError
);

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}
