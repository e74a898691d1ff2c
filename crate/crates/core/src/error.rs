use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("Fock-space truncation at n_max = {n_max} leaves tail population {tail:.3e} above tolerance {tolerance:.1e}")]
    Truncation { n_max: usize, tail: f64, tolerance: f64 },

    #[error("state is not normalized: total population {total:.12}")]
    Unnormalized { total: f64 },

    #[error("pulse kind {0} is not handled by this operation")]
    WrongPulseKind(String),

    #[error("histogram cutoff k_max = {k_max} leaves tail probability {tail:.3e} above 1e-6")]
    HistogramCutoff { k_max: usize, tail: f64 },

    #[error("reference distributions are indistinguishable; population cannot be estimated")]
    DegenerateReferences,

    #[error("sideband thermometry invalid: Q = rho_R/rho_B = {q:.4} (needs 0 <= Q < 1)")]
    Thermometry { q: f64 },

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("schedule error: order {order} pulse targeting n = {n}: {reason}")]
    Schedule { n: usize, order: i32, reason: String },

    #[error("sequence is empty")]
    EmptySequence,

    #[error("AOM chain cannot be solved: {0}")]
    Unsolvable(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
