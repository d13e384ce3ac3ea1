//! Energy-efficient joint uplink/downlink resource allocation for
//! ultra-reliable low-latency communication.
//!
//! Sensors reach a base station over frequency-hopping uplinks; the base
//! station forwards packets to users over downlinks that proactively drop
//! packets in deep fades. [`solver`] chooses bandwidths, antenna count and
//! subchannel count to minimize an upper bound on average total power.

pub mod error;
pub mod montecarlo;
pub mod numerics;
pub mod power;
pub mod qos;
pub mod reliability;
pub mod scenario;
pub mod solver;

pub use error::{BindingConstraint, Error, Result};
