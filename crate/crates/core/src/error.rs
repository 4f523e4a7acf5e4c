//! Error type shared by every module of the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The value function is infinite: wealth drift beats discounting plus mortality.
    #[error(
        "ill-posed model: theta - alpha - rho - mu_min = {excess:.6} must be negative (value function is infinite)"
    )]
    IllPosed { excess: f64 },

    #[error("invalid kernel distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("state tree has more than {cap} nodes")]
    TreeTooLarge { cap: usize },

    #[error("no root in bracket [{lo}, {hi}]: {what}")]
    NoRoot { lo: f64, hi: f64, what: String },

    #[error("resolvent integral diverges: {0}")]
    NonIntegrable(String),

    #[error("quadrature did not reach tolerance: {0}")]
    QuadratureFailure(String),

    #[error("child node {0} has not been solved")]
    ChildrenUnsolved(usize),

    #[error("value function is unbounded (majorant slope at infinity is infinite)")]
    UnboundedValue,

    #[error("stopping set still touches the grid boundary after {widenings} widenings at node {node}")]
    GridExhausted { node: usize, widenings: usize },

    #[error("regime at node {node} is ambiguous: degenerate asymptote and zero probe value")]
    Ambiguous { node: usize },

    #[error("unknown {kind} '{name}' (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },
}
