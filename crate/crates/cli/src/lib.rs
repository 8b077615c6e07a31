//! Scenario-driven front end: each subcommand is a function returning a
//! serializable report, so the binary and the tests share one code path.

pub mod commands;
pub mod scenario;
pub mod svg;

use gridstab::Error;

pub use scenario::{GainPolicy, Model, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("file error: {0}")]
    File(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("analysis verdict: unstable ({0})")]
    Unstable(String),
}

impl CliError {
    /// 1 unstable verdict, 2 bad input, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Unstable(_) => 1,
            CliError::File(_) | CliError::Input(_) => 2,
            CliError::Core(e) => match e {
                Error::Parse { .. }
                | Error::Topology(_)
                | Error::Index { .. }
                | Error::Dimension(_)
                | Error::Assumption(_)
                | Error::Sparsity { .. }
                | Error::MismatchedScenario(_)
                | Error::Io(_) => 2,
                Error::EigenFailure
                | Error::Explosion { .. }
                | Error::Infeasible(_)
                | Error::Unbounded
                | Error::Degenerate
                | Error::DivideByZero { .. }
                | Error::PowerFlowDiverged { .. }
                | Error::Numerical(_) => 3,
            },
        }
    }
}
