//! Error type shared by every module of the crate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Constraint that prevents a feasible allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BindingConstraint {
    /// Uplink power budget of one sensor.
    UplinkPower { sensor: usize },
    /// Aggregate downlink power budget.
    DownlinkPower,
    /// Total bandwidth budget.
    Bandwidth,
    /// No antenna count up to the cap satisfies the constraints.
    AntennaCap,
}

impl std::fmt::Display for BindingConstraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::UplinkPower { sensor } => write!(f, "uplink power of sensor {sensor}"),
            Self::DownlinkPower => write!(f, "downlink power"),
            Self::Bandwidth => write!(f, "total bandwidth"),
            Self::AntennaCap => write!(f, "antenna cap"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Function values at both ends of a bracket share a sign.
    #[error("root not bracketed on [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64 },

    /// Iterative method hit its iteration cap.
    #[error("{what} did not converge after {iterations} iterations")]
    Convergence { what: &'static str, iterations: usize },

    /// Latency budget leaves no room for queueing.
    #[error("queueing delay bound {bound:.3e} s is not positive for n_a = {n_a}")]
    InfeasibleLatency { n_a: u32, bound: f64 },

    /// Optimization problem has no feasible point.
    #[error("infeasible at n_t = {n_t}, n_a = {n_a}: {binding} is binding")]
    Infeasible { binding: BindingConstraint, n_t: u32, n_a: u32 },

    /// Parameter set violates an invariant.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
