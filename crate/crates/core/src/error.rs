use thiserror::Error;

/// Errors raised by the library.
///
/// The variants are grouped so that frontends can map them onto stable
/// exit codes: input problems, infeasibility, and numerical trouble.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate rating spec: {0}")]
    DegenerateSpec(String),

    #[error("grid schema error: {0}")]
    Schema(String),

    #[error("grid is not connected: bus {0} cannot be reached from the slack")]
    Disconnected(u32),

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("power imbalance of {imbalance:.6} MW exceeds tolerance {tolerance:.3e} MW")]
    Imbalance { imbalance: f64, tolerance: f64 },

    #[error("vertex enumeration capacity exceeded: dimension {dim} > cap {cap}")]
    Capacity { dim: usize, cap: usize },

    #[error("procurement infeasible: {reason}")]
    Infeasible { reason: String },

    #[error("realization not covered by the procured reserves; violated lines: {lines:?}")]
    Uncovered { lines: Vec<String> },

    #[error("guarantee vector infeasible for available reserves; binding lines: {lines:?}")]
    InfeasibleGuarantee { lines: Vec<String> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible { .. } | Error::Uncovered { .. } | Error::InfeasibleGuarantee { .. })
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
