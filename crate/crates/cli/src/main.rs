//! `urllc`: scenario generation, allocation, baseline comparison, sweeps and
//! Monte Carlo validation.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::{info, warn};
use urllc_core::montecarlo::validate_allocation;
use urllc_core::scenario::{generate_scenario, watts_to_dbm, Scenario};
use urllc_core::solver::{Planner, SolverReport, Strategy};

use config::{RunConfig, UsageError};
use output::{FeasibilityRow, Outputs, StrategyRow};

#[derive(Debug, Parser)]
#[command(name = "urllc", version, about = "URLLC uplink/downlink resource allocation")]
struct Cli {
    /// TOML file with [system], [simulation] and [population] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for scenario placement and simulation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Log solver stages, iteration counts and duality gaps.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct ScenarioArgs {
    /// Scenario file; drawn from the configured population if absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a scenario and write scenario.json.
    Generate {
        #[arg(long)]
        sensors: Option<usize>,
        #[arg(long)]
        users: Option<usize>,
    },
    /// Optimize one strategy and write report.json.
    Solve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "joint")]
        strategy: Strategy,
    },
    /// Feasibility margin against antenna count for every subchannel count.
    Feasibility {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 2)]
        n_t_from: u32,
        /// Defaults to the antenna cap.
        #[arg(long)]
        n_t_to: Option<u32>,
        /// Defaults to a step giving about 128 points.
        #[arg(long)]
        n_t_step: Option<u32>,
    },
    /// Joint optimum against every baseline.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Optimal power for each subchannel count.
    SweepNa {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Energy efficiency over sensor and user populations.
    SweepPop {
        #[arg(long, value_delimiter = ',', required = true)]
        sensors: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        users: Vec<usize>,
    },
    /// Monte Carlo validation of an allocation.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Report from `solve`; the strategy is solved afresh if absent.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "joint")]
        strategy: Strategy,
        /// Uplink packets per sensor and downlink frames per user.
        #[arg(long)]
        trials: Option<u64>,
        /// Drop and queueing budget used in simulation, or `none`.
        #[arg(long)]
        relaxed_eps: Option<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Solve { .. } => "solve",
            Command::Feasibility { .. } => "feasibility",
            Command::Compare { .. } => "compare",
            Command::SweepNa { .. } => "sweep-na",
            Command::SweepPop { .. } => "sweep-pop",
            Command::Validate { .. } => "validate",
        }
    }
}

struct Session {
    cfg: RunConfig,
    seed: u64,
}

impl Session {
    fn scenario(&self, args: &ScenarioArgs) -> anyhow::Result<Scenario> {
        match &args.scenario {
            Some(p) => {
                Scenario::load(p).map_err(|e| UsageError(format!("cannot load scenario {}: {e}", p.display())).into())
            }
            None => {
                let pop = self.cfg.population;
                Ok(generate_scenario(pop.sensors, pop.users, self.seed, &self.cfg.system)?)
            }
        }
    }
}

fn solve(scenario: &Scenario, strategy: Strategy) -> anyhow::Result<SolverReport> {
    let p = &scenario.params;
    let planner = Planner::new(scenario, &p.budget()?, &p.circuit())?;
    let land = planner.landscape(p.psi)?;
    for w in &land.warnings {
        info!("{w}");
    }
    let report = planner.baseline(strategy, &land)?;
    info!(
        "{} n_t={} n_a={} total={:.3} dBm z*={:.3e}",
        strategy.name(),
        report.allocation.n_t,
        report.allocation.n_a,
        watts_to_dbm(report.cost.total_ub),
        report.z_star
    );
    Ok(report)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(cfg.simulation.seed);
    let ctx = Session { cfg, seed };
    let mut out = Outputs::new(&cli.out, cli.command.name(), cli.config.as_deref(), seed)?;
    match &cli.command {
        Command::Generate { sensors, users } => {
            let pop = ctx.cfg.population;
            let sc =
                generate_scenario(sensors.unwrap_or(pop.sensors), users.unwrap_or(pop.users), seed, &ctx.cfg.system)?;
            out.json("scenario.json", &sc)?;
        }
        Command::Solve { scenario, strategy } => {
            let sc = ctx.scenario(scenario)?;
            out.json_report("report.json", &solve(&sc, *strategy)?)?;
        }
        Command::Feasibility { scenario, n_t_from, n_t_to, n_t_step } => {
            let sc = ctx.scenario(scenario)?;
            let p = &sc.params;
            let planner = Planner::new(&sc, &p.budget()?, &p.circuit())?;
            let to = n_t_to.unwrap_or(p.psi);
            let from = (*n_t_from).max(2);
            if to < from {
                return Err(UsageError(format!("empty antenna range {from}..={to}")).into());
            }
            let step = n_t_step.unwrap_or(((to - from) / 128).max(1)).max(1);
            let mut rows = Vec::new();
            for n_a in planner.subchannel_options() {
                let mut n_t = from;
                loop {
                    let z = planner.feasibility_z(n_t, n_a)?;
                    let (g_u, g_d) = planner.thresholds(n_t, n_a)?;
                    rows.push(FeasibilityRow::new(n_a, n_t, z, g_u, g_d));
                    if n_t == to {
                        break;
                    }
                    n_t = (n_t + step).min(to);
                }
            }
            out.csv("feasibility.csv", &rows)?;
        }
        Command::Compare { scenario } => {
            let sc = ctx.scenario(scenario)?;
            let p = &sc.params;
            let planner = Planner::new(&sc, &p.budget()?, &p.circuit())?;
            let results = planner.compare(p.psi)?;
            let joint = results
                .iter()
                .find(|(s, _)| *s == Strategy::Joint)
                .and_then(|(_, r)| r.as_ref().ok())
                .map(|r| r.cost.total_ub);
            let rows: Vec<StrategyRow> = results
                .iter()
                .map(|(s, r)| StrategyRow::new(*s, &sc, &r.as_ref().cloned().map_err(ToString::to_string), joint))
                .collect();
            out.csv("compare.csv", &rows)?;
        }
        Command::SweepNa { scenario } => {
            let sc = ctx.scenario(scenario)?;
            let p = &sc.params;
            let planner = Planner::new(&sc, &p.budget()?, &p.circuit())?;
            let land = planner.landscape(p.psi)?;
            let rows: Vec<StrategyRow> = (1..=p.n_a_max)
                .map(|n_a| {
                    let r = planner.optimum_at_subchannels(n_a, &land).map_err(|e| e.to_string());
                    let mut row = StrategyRow::new(Strategy::Joint, &sc, &r, None);
                    row.n_a = Some(n_a);
                    row
                })
                .collect();
            out.csv("sweep_na.csv", &rows)?;
        }
        Command::SweepPop { sensors, users } => {
            let mut rows = Vec::new();
            for &m in sensors {
                for &k in users {
                    let sc = generate_scenario(m, k, seed, &ctx.cfg.system)?;
                    let started = Instant::now();
                    let r = solve(&sc, Strategy::Joint).map_err(|e| format!("{e:#}"));
                    info!("population {m}/{k} solved in {:?}", started.elapsed());
                    rows.push(StrategyRow::new(Strategy::Joint, &sc, &r, None));
                }
            }
            out.csv("sweep_pop.csv", &rows)?;
        }
        Command::Validate { scenario, report, strategy, trials, relaxed_eps } => {
            let sc = ctx.scenario(scenario)?;
            let alloc = match report {
                Some(path) => output::read_report(path)?.allocation,
                None => solve(&sc, *strategy)?.allocation,
            };
            let mut sim = ctx.cfg.simulation;
            sim.seed = seed;
            if let Some(n) = trials {
                sim.trials = *n;
                sim.frames = *n;
            }
            if let Some(e) = relaxed_eps {
                sim.relaxed_eps = parse_eps(e)?;
            }
            sim.validate().map_err(|e| UsageError(e.to_string()))?;
            let r = validate_allocation(&sc, &alloc, &sc.params.budget()?, &sim)?;
            if !r.pass {
                warn!("validation verdicts failed; see validation.json");
            }
            out.json_report("validation.json", &r)?;
        }
    }
    out.finish()
}

fn parse_eps(s: &str) -> anyhow::Result<Option<f64>> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| UsageError(format!("--relaxed-eps expects a probability or `none`, got {s}")).into())
}

/// Error class and exit status.
fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return ("usage", 2);
        }
        if let Some(e) = cause.downcast_ref::<urllc_core::Error>() {
            return match e {
                urllc_core::Error::Infeasible { .. } | urllc_core::Error::InfeasibleLatency { .. } => ("infeasible", 3),
                urllc_core::Error::InvalidParameter(_) | urllc_core::Error::Domain(_) => ("usage", 2),
                urllc_core::Error::Io(_) | urllc_core::Error::Json(_) => ("io", 1),
                _ => ("numerical", 1),
            };
        }
    }
    ("internal", 1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli).context("urllc failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = classify(&e);
            let message = format!("{:#}", e);
            eprintln!("{}", serde_json::json!({ "error": class, "message": message }));
            ExitCode::from(code)
        }
    }
}
