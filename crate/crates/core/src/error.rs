use thiserror::Error;

use crate::solver::SolverError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Every kernel evaluation was zero, or a slot lost all its records
    /// after context filtering.
    #[error("no kernel mass{}", .slot.map(|s| format!(" for slot {s}")).unwrap_or_default())]
    NoMass { slot: Option<usize> },

    #[error("model error: {0}")]
    Model(String),

    /// The partition extracted from a busy-period decomposition failed the
    /// strong-duality check.
    #[error("degenerate dual: extracted partition gives {dual} but primal cost is {primal}")]
    DegenerateDual { primal: f64, dual: f64 },

    #[error("iteration cap of {cap} reached after {iterations} iterations")]
    IterationCap { cap: usize, iterations: usize },

    #[error(transparent)]
    Solver(#[from] SolverError),

    #[error("malformed data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier used for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NoMass { .. } => "NoMass",
            Error::Model(_) => "Model",
            Error::DegenerateDual { .. } => "DegenerateDual",
            Error::IterationCap { .. } => "IterationCap",
            Error::Solver(_) => "Solver",
            Error::Data(_) => "Data",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }
}
