//! Run configuration read from a TOML file.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use urllc_core::montecarlo::SimConfig;
use urllc_core::scenario::SystemParams;

/// Population drawn when no scenario file is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub sensors: usize,
    pub users: usize,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self { sensors: 300, users: 100 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: SystemParams,
    pub simulation: SimConfig,
    pub population: PopulationConfig,
}

/// Raised for malformed input; maps to exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| UsageError(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| UsageError(format!("bad config {}: {e}", p.display())))?
            }
        };
        cfg.system.validate().map_err(|e| UsageError(e.to_string())).context("invalid [system] section")?;
        cfg.simulation.validate().map_err(|e| UsageError(e.to_string())).context("invalid [simulation] section")?;
        Ok(cfg)
    }
}
