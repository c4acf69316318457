//! Numerical verification of first-order optimality conditions for
//! infinite-horizon optimal control problems.
//!
//! The crate audits the standing assumptions of a problem, computes adjoints
//! along a candidate process by two independent routes, checks the
//! Pontryagin-type necessary conditions (adjoint equation, maximum condition,
//! transversality, Michel condition) together with an Arrow-type sufficient
//! condition, and builds needle-variation families.

pub mod catalog;
pub mod config;
pub mod error;
pub mod expr;
pub mod integrate;
pub mod limits;
pub mod needle;
pub mod pmp;
pub mod problem;
pub mod report;
pub mod sufficiency;
pub mod weights;

pub use config::{Mode, Tolerances, Verdict};
pub use error::{Error, Result};
