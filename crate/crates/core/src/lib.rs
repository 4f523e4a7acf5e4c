//! Optimal annuitization under a piecewise-deterministic mortality force.
//!
//! Wealth follows a geometric Brownian motion; the mortality force jumps a
//! finite number of times. The crate enumerates the reachable mortality
//! states, solves the nested one-dimensional stopping problems backwards from
//! the last stage (closed forms at the last stage, a concave-majorant method
//! elsewhere) and checks the result against an independent Monte Carlo
//! oracle and a suite of structural invariants.

pub mod case_study;
pub mod diffusion;
pub mod error;
pub mod interp;
pub mod majorant;
pub mod model;
pub mod montecarlo;
pub mod mortality;
pub mod policy;
pub mod solver;
pub mod sweep;
pub mod terminal;
pub mod verify;

pub use error::{Error, Result};
