use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Topology or fault structure violates a structural invariant.
    #[error("structural error: {0}")]
    Structural(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no estimation possible: {0}")]
    NoEstimation(String),

    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    #[error("enumeration of {count} subsets exceeds the cap of {cap}")]
    CombinatorialCap { count: u128, cap: u128 },

    #[error("empty window: {0}")]
    EmptyWindow(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("stale catalog cache: expected fingerprint {expected}, found {found}")]
    StaleCache { expected: String, found: String },

    #[error(
        "QP solver did not converge after {iterations} iterations (KKT residual {kkt_residual:e}, objective {objective:e})"
    )]
    NonConvergence {
        iterations: usize,
        kkt_residual: f64,
        objective: f64,
    },

    /// Should never happen for well-formed inputs.
    #[error("internal invariant broken: {0}")]
    Internal(String),

    #[error("parse error in {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Structural(_) => "structural",
            Error::Contract(_) => "contract",
            Error::NoEstimation(_) => "no-estimation",
            Error::Infeasible(_) => "infeasible",
            Error::CombinatorialCap { .. } => "combinatorial-cap",
            Error::EmptyWindow(_) => "empty-window",
            Error::Validation(_) => "validation",
            Error::StaleCache { .. } => "stale-cache",
            Error::NonConvergence { .. } => "non-convergence",
            Error::Internal(_) => "internal",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.to_string(),
        }
    }
}
