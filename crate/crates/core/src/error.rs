use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the estimator stack can report.
///
/// Variants are grouped by the stage that raises them; [`Error::exit_code`]
/// maps each group to the stable process exit code used by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("insufficient data: {rows} observations for {cols} coefficients")]
    InsufficientData { rows: usize, cols: usize },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("solver failed to converge after {iterations} iterations (gap {gap:e}): {detail}")]
    Numerical {
        iterations: usize,
        gap: f64,
        detail: String,
    },

    #[error("problem too large for brute-force oracle: T = {rows} exceeds cap {cap}")]
    OracleSize { rows: usize, cap: usize },

    #[error("bandwidth error: {0}")]
    Bandwidth(String),

    #[error("singular sandwich for individual {individual}: {detail}")]
    SingularSandwich { individual: String, detail: String },

    #[error("estimation failed for individual {individual}: {source}")]
    Individual {
        individual: String,
        #[source]
        source: Box<Error>,
    },

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("inference error: {0}")]
    Inference(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("unbalanced panel: {0}")]
    Unbalanced(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("record version mismatch: found {found}, expected {expected}")]
    Version { found: String, expected: String },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for this error class.
    ///
    /// | code | meaning |
    /// |------|---------|
    /// | 3 | malformed or unbalanced input |
    /// | 4 | estimation failure (design, solver, sandwich, aggregation) |
    /// | 5 | I/O failure |
    /// | 6 | invalid configuration or parameter |
    /// | 7 | record version mismatch |
    /// | 8 | simulation cell failure |
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Unbalanced(_) => 3,
            Error::InsufficientData { .. }
            | Error::DegenerateDesign(_)
            | Error::Numerical { .. }
            | Error::SingularSandwich { .. }
            | Error::Individual { .. }
            | Error::Aggregation(_)
            | Error::Inference(_)
            | Error::Bandwidth(_)
            | Error::OracleSize { .. } => 4,
            Error::Io(_) => 5,
            Error::Parameter(_) | Error::Config(_) | Error::Serde(_) => 6,
            Error::Version { .. } => 7,
            Error::Simulation(_) => 8,
        }
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "tau must lie in (0, 1), got {tau}"
        )))
    }
}
