//! Embedded LP and MILP engines.
//!
//! [`lp_solve`] is a dense bounded-variable primal simplex (two phases,
//! Dantzig pricing with a Bland fallback under degeneracy). [`milp_solve`]
//! runs best-bound branch-and-bound over a set of binary columns on top of it,
//! with relative-gap, time-limit and objective-floor controls.

mod lp;
mod lpformat;
mod milp;

use thiserror::Error;

pub use lp::{lp_solve, Cmp, Constraint, LpOutcome, LpProblem, LpSolution};
pub use lpformat::write_lp_format;
pub use milp::{
    milp_solve, relative_gap, EmbeddedMilp, MilpBackend, MilpOptions, MilpProblem, MilpResult, MilpStatus,
    GAP_DENOMINATOR_FLOOR,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("malformed problem: {0}")]
    Malformed(String),
}
