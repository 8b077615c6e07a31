use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("index {index} outside 1..={max}")]
    Index { index: usize, max: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Every sensor node must also host a DER for the reduced model to be minimal.
    #[error("sensor/DER assumption violated: {0}")]
    Assumption(String),

    #[error("gain entry ({row}, {col}) = {value} lies outside the sparsity pattern")]
    Sparsity { row: usize, col: usize, value: f64 },

    #[error("eigensolver did not converge")]
    EigenFailure,

    #[error("polytope would need {rows} rows, above the cap of {cap}")]
    Explosion { rows: u128, cap: usize },

    #[error("parameter polytope is empty (best signed radius {0:e})")]
    Infeasible(f64),

    #[error("Chebyshev radius is unbounded")]
    Unbounded,

    #[error("parameter region has zero radius")]
    Degenerate,

    #[error("zero common-node reactance at gain position ({row}, {col})")]
    DivideByZero { row: usize, col: usize },

    #[error("power flow did not converge at step {step} (mismatch {mismatch:e})")]
    PowerFlowDiverged { step: usize, mismatch: f64 },

    #[error("mismatched scenario: {0}")]
    MismatchedScenario(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
