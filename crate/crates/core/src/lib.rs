//! Quantile-objective two-stage stochastic programs with contextual
//! scenario weights.
//!
//! The crate is organised bottom-up:
//!
//! * [`estimator`]: local-regression weights and the weighted empirical quantile.
//! * [`solver`]: dense bounded simplex and a best-bound branch-and-bound MILP engine.
//! * [`twostage`]: generic two-stage LP structure, its big-M MILP and master forms.
//! * [`asp`]: single-server appointment scheduling: closed-form recourse and dual vertices.
//! * [`sicg`]: the stochastic inexact constraint-generation loop.
//! * [`lab`]: data generation, CSO/SAA pipelines and out-of-sample studies.

// NaN must fail validation, so `!(x >= 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod asp;
pub mod error;
pub mod estimator;
pub mod lab;
pub mod par;
pub mod sicg;
pub mod solver;
pub mod twostage;

pub use error::{Error, Result};
