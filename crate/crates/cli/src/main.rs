//! `latgas`: reproducible lattice-gas experiments from TOML configs.
//!
//! Exit codes: `0` all enforced checks passed, `1` a quantitative check or
//! run-time guard failed, `2` configuration or environment error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use latgas_cli::config::ExperimentConfig;
use latgas_cli::experiments::{self, Outcome};
use latgas_cli::report::{config_tag, Reporter};
use latgas_cli::{CliError, Result};

#[derive(Parser)]
#[command(
    name = "latgas",
    version,
    about = "Open-boundary lattice gases: simulation, conservation-law solving, and hydrostatic analysis"
)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides `run.seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for replica fan-out (default: all cores). Outputs do
    /// not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output root; overrides `output.dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Subcommand)]
enum Cmd {
    /// Check the config and the model's structural requirements.
    Validate,
    /// Run the particle system and write density snapshots.
    Simulate,
    /// Solve the macroscopic conservation law and audit the solution.
    Solve,
    /// Measure stationary profiles and compare bulks with predictions.
    Hydrostatic,
    /// Classify the reservoir plane into phase regions.
    Phases,
    /// Couple the process with a dominating uniform-reservoir copy.
    CoupleAudit,
    /// Compare empirical profiles against the PDE across lattice sizes.
    HydroConvergence,
}

impl Cmd {
    fn name(self) -> &'static str {
        match self {
            Cmd::Validate => "validate",
            Cmd::Simulate => "simulate",
            Cmd::Solve => "solve",
            Cmd::Hydrostatic => "hydrostatic",
            Cmd::Phases => "phases",
            Cmd::CoupleAudit => "couple-audit",
            Cmd::HydroConvergence => "hydro-convergence",
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let (cfg, raw) = ExperimentConfig::load(path)?;
    let seed = cli.seed.unwrap_or(cfg.run.seed);
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        // Ignore the error when a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let root = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let tag = config_tag(&raw, seed);
    let mut rep = Reporter::create(&root, cli.cmd.name(), &tag)?;

    let outcome = match cli.cmd {
        Cmd::Validate => experiments::cmd_validate(&cfg, seed, &mut rep)?,
        Cmd::Simulate => experiments::cmd_simulate(&cfg, seed, &mut rep)?,
        Cmd::Solve => experiments::cmd_solve(&cfg, seed, &mut rep)?,
        Cmd::Hydrostatic => experiments::cmd_hydrostatic(&cfg, seed, &mut rep)?,
        Cmd::Phases => experiments::cmd_phases(&cfg, seed, &mut rep)?,
        Cmd::CoupleAudit => experiments::cmd_couple_audit(&cfg, seed, &mut rep)?,
        Cmd::HydroConvergence => experiments::cmd_hydro_convergence(&cfg, seed, &mut rep)?,
    };
    for f in rep.files() {
        println!("wrote {}", f.display());
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            for c in &outcome.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if outcome.pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("latgas: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
