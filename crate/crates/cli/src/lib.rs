//! Command-line front end: configuration loading, output management and the
//! subcommand drivers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::RunConfig;
use output::OutputDir;

pub const DEFAULT_OUT: &str = "randattract-out";

#[derive(Debug, Parser)]
#[command(
    name = "randattract",
    version,
    about = "Pathwise SPDE simulator and random attractor diagnostics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML configuration file; defaults are used for missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, env = "RANDATTRACT_OUT")]
    pub out: Option<PathBuf>,

    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Base seed, overrides `noise.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Ensemble of semilinear runs.
    Simulate,
    /// OU stationarity and temperedness tables.
    OuDiagnose,
    /// Pullback attractor estimate.
    AttractorPullback,
    /// Invariant suite; exit code 3 on any failure.
    Verify,
    /// Dyadic refinement study with fitted strong order.
    Convergence {
        /// Number of refinement levels, overrides `experiment.levels`.
        #[arg(long)]
        levels: Option<usize>,
    },
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::OuDiagnose => "ou-diagnose",
            Command::AttractorPullback => "attractor-pullback",
            Command::Verify => "verify",
            Command::Convergence { .. } => "convergence",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Validation(String),
    Numerical(String),
    Invariant(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) | CliError::Io(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation failure: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
            CliError::Invariant(m) => write!(f, "invariant-suite failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<randattract::Error> for CliError {
    fn from(e: randattract::Error) -> Self {
        use randattract::Error as E;
        match e {
            E::Config(_) | E::ShiftRange { .. } | E::Alignment(_) | E::Ordering { .. } => {
                CliError::Validation(e.to_string())
            }
            E::Definiteness(_) | E::Numerical(_) => CliError::Numerical(e.to_string()),
        }
    }
}

/// Loads, overrides and validates the configuration.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(CliError::Validation)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.noise.seed = seed;
    }
    if let Command::Convergence { levels: Some(l) } = cli.command {
        config.experiment.levels = l;
    }
    config.validate().map_err(CliError::Validation)?;
    Ok(config)
}

/// Runs one subcommand and returns the process exit code.
pub fn run(cli: &Cli) -> u8 {
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("randattract: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be positive".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let config = resolve_config(cli)?;
    let root = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let hash = config.hash();
    let mut out = OutputDir::create(&root, &hash)
        .map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
    out.log(&format!(
        "{} config_hash={hash} seed={}",
        cli.command.name(),
        config.noise.seed
    ));
    let result = match cli.command {
        Command::Simulate => commands::simulate(&config, &mut out),
        Command::OuDiagnose => commands::ou_diagnose(&config, &mut out),
        Command::AttractorPullback => commands::attractor_pullback(&config, &mut out),
        Command::Verify => commands::verify(&config, &mut out),
        Command::Convergence { .. } => commands::convergence(&config, &mut out),
    };
    match result {
        Ok(()) => {
            out.write("config.toml", config.to_toml().as_bytes())
                .map_err(|e| CliError::Io(e.to_string()))?;
            let seeds = (0..config.noise.n_paths as u64)
                .map(|i| randattract::mds::path_seed(config.noise.seed, i))
                .collect();
            out.finish(cli.command.name(), config.noise.seed, seeds)
                .map_err(|e| CliError::Io(e.to_string()))
        }
        Err(e) => {
            out.abandon(&e.to_string());
            Err(e)
        }
    }
}
