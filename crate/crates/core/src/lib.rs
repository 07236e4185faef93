//! Utility-based scheduling and tiered pricing for serverless jobs.
//!
//! The crate is organised bottom-up:
//!
//! * [`instance`] – problem data, derived per-tier values and welfare evaluation;
//! * [`lp`] – a small revised-simplex solver returning vertices and duals;
//! * [`scheduler`] – the welfare LP, exact solvers, rounding and gap bounds;
//! * [`market`] – the budget/price protocol and price tracking;
//! * [`cpt`] – lottery allocation under probability weighting;
//! * [`sim`] – the multi-day market simulation and lottery experiments.

pub mod cpt;
pub mod error;
pub mod instance;
pub mod lp;
pub mod market;
pub mod scheduler;
pub mod sim;

pub use error::{Error, Result};
pub use instance::{Allocation, CompletionProfile, DerivedValues, Matrix, ProblemInstance};
