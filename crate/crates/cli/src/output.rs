//! Output files, CSV rows and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use urllc_core::scenario::{linear_to_db, watts_to_dbm, Scenario};
use urllc_core::solver::{SolverReport, Strategy};

use crate::config::UsageError;

/// Provenance of one invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub version: &'static str,
    pub duration_s: f64,
}

/// JSON output wrapper naming the manifest that produced it.
#[derive(Debug, Serialize)]
pub struct Document<T> {
    pub manifest: String,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Deserialize)]
struct ReportDocument {
    report: SolverReport,
}

pub struct Outputs {
    dir: PathBuf,
    command: &'static str,
    config: Option<PathBuf>,
    seed: u64,
    files: Vec<String>,
    started: Instant,
}

impl Outputs {
    pub fn new(dir: &Path, command: &'static str, config: Option<&Path>, seed: u64) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            config: config.map(Path::to_path_buf),
            seed,
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    fn manifest_name(&self) -> String {
        format!("{}.manifest.json", self.command)
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    /// Plain JSON, readable back by the library.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let path = self.path(name);
        fs::write(&path, serde_json::to_string_pretty(value)?)
            .with_context(|| format!("cannot write {}", path.display()))
    }

    /// JSON under a `report` key, alongside the manifest name.
    pub fn json_report<T: Serialize>(&mut self, name: &str, report: &T) -> anyhow::Result<()> {
        #[derive(Serialize)]
        struct Body<'a, T> {
            report: &'a T,
        }
        let doc = Document { manifest: self.manifest_name(), body: Body { report } };
        self.json(name, &doc)
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> anyhow::Result<()> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn finish(self) -> anyhow::Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: self.config.clone(),
            seed: self.seed,
            outputs: self.files.clone(),
            version: env!("CARGO_PKG_VERSION"),
            duration_s: self.started.elapsed().as_secs_f64(),
        };
        let path = self.dir.join(self.manifest_name());
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .with_context(|| format!("cannot write {}", path.display()))
    }
}

pub fn read_report(path: &Path) -> anyhow::Result<SolverReport> {
    let text =
        fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read report {}: {e}", path.display())))?;
    let doc: ReportDocument =
        serde_json::from_str(&text).map_err(|e| UsageError(format!("bad report {}: {e}", path.display())))?;
    Ok(doc.report)
}

#[derive(Debug, Serialize)]
pub struct FeasibilityRow {
    pub n_a: u32,
    pub n_t: u32,
    pub z_star_w: f64,
    pub feasible: bool,
    pub g_th_ul: f64,
    pub g_th_dl: f64,
}

impl FeasibilityRow {
    pub fn new(n_a: u32, n_t: u32, z: f64, g_th_ul: f64, g_th_dl: f64) -> Self {
        Self { n_a, n_t, z_star_w: z, feasible: z <= 0.0, g_th_ul, g_th_dl }
    }
}

/// Cost columns of a solved allocation; empty when unsolved.
#[derive(Debug, Default, Clone, Copy)]
struct CostColumns {
    n_t: Option<u32>,
    n_a: Option<u32>,
    total_dbm: Option<f64>,
    ul_tx_w: Option<f64>,
    dl_tx_w: Option<f64>,
    circuit_w: Option<f64>,
    bandwidth_mhz: Option<f64>,
    ee_bits_per_joule: Option<f64>,
}

impl CostColumns {
    fn from_report(r: &SolverReport) -> Self {
        let c = &r.cost;
        let a = &r.allocation;
        Self {
            n_t: Some(a.n_t),
            n_a: Some(a.n_a),
            total_dbm: Some(watts_to_dbm(c.total_ub)),
            ul_tx_w: Some(c.ul_tx),
            dl_tx_w: Some(c.dl_tx),
            circuit_w: Some(c.circuit_antenna + c.circuit_carrier + c.circuit_sensor),
            bandwidth_mhz: Some((a.b_ul.iter().sum::<f64>() + a.b_dl.iter().sum::<f64>()) / 1e6),
            ee_bits_per_joule: Some(c.ee),
        }
    }
}

/// Row of `compare.csv`, `sweep_na.csv` or `sweep_pop.csv`.
#[derive(Debug, Serialize)]
pub struct StrategyRow {
    pub strategy: &'static str,
    pub sensors: usize,
    pub users: usize,
    pub seed: u64,
    pub status: String,
    pub gap_db: Option<f64>,
    pub n_t: Option<u32>,
    pub n_a: Option<u32>,
    pub total_dbm: Option<f64>,
    pub ul_tx_w: Option<f64>,
    pub dl_tx_w: Option<f64>,
    pub circuit_w: Option<f64>,
    pub bandwidth_mhz: Option<f64>,
    pub ee_bits_per_joule: Option<f64>,
    pub detail: String,
}

impl StrategyRow {
    pub fn new(
        strategy: Strategy,
        scenario: &Scenario,
        r: &std::result::Result<SolverReport, String>,
        reference_w: Option<f64>,
    ) -> Self {
        let (status, detail, c, gap_db) = match r {
            Ok(rep) => (
                "optimal".to_string(),
                String::new(),
                CostColumns::from_report(rep),
                reference_w.map(|w| linear_to_db(rep.cost.total_ub / w)),
            ),
            Err(e) => {
                let status = if e.contains("infeasible") { "infeasible" } else { "error" };
                (status.to_string(), e.clone(), CostColumns::default(), None)
            }
        };
        Self {
            strategy: strategy.name(),
            sensors: scenario.sensors.len(),
            users: scenario.users.len(),
            seed: scenario.seed,
            status,
            gap_db,
            n_t: c.n_t,
            n_a: c.n_a,
            total_dbm: c.total_dbm,
            ul_tx_w: c.ul_tx_w,
            dl_tx_w: c.dl_tx_w,
            circuit_w: c.circuit_w,
            bandwidth_mhz: c.bandwidth_mhz,
            ee_bits_per_joule: c.ee_bits_per_joule,
            detail,
        }
    }
}
