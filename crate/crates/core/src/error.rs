use thiserror::Error;

/// Errors produced by the numerical routines and file readers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation (negative time, s > t, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Matrix or vector shapes that do not fit together.
    #[error("structural error: {0}")]
    Structure(String),

    /// A linear solve or similar numerical step failed.
    #[error("numerical error: {0}")]
    Numeric(String),

    /// Hazard rate requested where the survival function has underflowed.
    #[error("hazard unavailable at x = {x}: survival {survival:e} has underflowed")]
    HazardUnavailable { x: f64, survival: f64 },

    /// An observation has zero likelihood under the current parameters.
    #[error("fit degeneracy: observation {index} (time {time}) has zero {kind}")]
    FitDegenerate {
        index: usize,
        time: f64,
        kind: &'static str,
    },

    /// A phase has zero expected occupation time, so its rates cannot be updated.
    #[error("degenerate state {state}: expected occupation time is zero")]
    DegenerateState { state: usize },

    /// Every EM restart failed.
    #[error("fit failed: {0}")]
    FitFailure(String),

    /// Scaled bond prices that increase with maturity.
    #[error("scaled prices are not monotone at maturities {maturities:?}")]
    NonMonotone { maturities: Vec<f64> },

    /// A Hankel determinant that is not strictly positive.
    #[error("invalid moment sequence: Hankel determinant A_{order} = {value:e} is not positive")]
    InvalidMoments { order: usize, value: f64 },

    #[error("premium has no sensitivity to theta (derivative {0:e})")]
    NoPremiumSensitivity(f64),

    #[error("Newton iteration did not converge after {iterations} steps; residuals {trace:?}")]
    NewtonFailure { iterations: usize, trace: Vec<f64> },

    /// Malformed input file; `line` is 1-based when known.
    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<u64>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }

    pub(crate) fn parse(line: Option<u64>, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}
