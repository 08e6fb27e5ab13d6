//! `ura`: batch front-end for the bound toolkit.
//!
//! Every run resolves a [`RunConfig`] from defaults, an optional TOML file and
//! command-line overrides, evaluates one subcommand and writes a CSV table
//! plus a JSON artifact that embeds the [`RunManifest`]. `replay` re-runs a
//! manifest and reproduces the rows bit for bit.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid configuration or violated
//! precondition, 3 infeasible result (artifacts are still written), 4 I/O or
//! numeric failure.

pub mod commands;
pub mod config;
pub mod table;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

use commands::*;
pub use config::{Overrides, RunConfig};
pub use table::{Cell, Table, UNIT_SUFFIXES};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] ura_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use ura_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Core(E::Validation(_) | E::Domain(_) | E::Precondition(_) | E::Guard(_)) => 2,
            _ => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ura", version, about = "Finite-blocklength bounds and simulation for unsourced random access")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct GlobalArgs {
    /// TOML file with sections system, prior, ensemble, targets, search, mc, optimizer.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// CSV destination; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON artifact destination; defaults to the CSV path with a .json extension.
    #[arg(long, global = true)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Bound on the probability of estimating K'_a when K_a users are active.
    KaBound(KaBoundArgs),
    /// Simulated distribution of the count estimate.
    KaSim(KaSimArgs),
    /// Misdetection and false-alarm bounds of the two-stage decoder.
    DetectBound(DetectBoundArgs),
    /// Joint-error bound for a known number of users.
    JointBound(JointBoundArgs),
    /// Converse feasibility at the configured power.
    Converse(ConverseArgs),
    /// Minimum E_b/N_0 from the achievability and converse bounds.
    MinEbn0(MinEbn0Args),
    /// Monte-Carlo run of the two-stage scheme with exhaustive decoding.
    Simulate(SimulateArgs),
    /// Sweep of one parameter with a trend summary.
    Trend(TrendArgs),
    /// Re-run the command stored in a JSON artifact.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, clap::Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Provenance of a run, embedded in every JSON artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    /// Configuration after file and flag overrides, with K resolved.
    pub config: RunConfig,
    pub seed: u64,
    pub trials: usize,
    pub threads: Option<usize>,
    /// "bound", "empirical" or "search".
    pub provenance: String,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact {
    pub manifest: RunManifest,
    pub infeasible: bool,
    pub table: Table,
    #[serde(default)]
    pub details: serde_json::Value,
}

fn provenance(c: &Command) -> &'static str {
    match c {
        Command::KaSim(_) | Command::Simulate(_) => "empirical",
        Command::MinEbn0(_) => "search",
        Command::Trend(a) if a.quantity == TrendKind::EmpiricalKa => "empirical",
        _ => "bound",
    }
}

fn evaluate(command: &Command, cfg: &RunConfig) -> Result<commands::Outcome, CliError> {
    match command {
        Command::KaBound(a) => ka_bound(cfg, a),
        Command::KaSim(a) => ka_sim(cfg, a),
        Command::DetectBound(a) => detect_bound(cfg, a),
        Command::JointBound(a) => joint_bound(cfg, a),
        Command::Converse(a) => converse(cfg, a),
        Command::MinEbn0(a) => min_ebn0(cfg, a),
        Command::Simulate(a) => simulate(cfg, a),
        Command::Trend(a) => trend(cfg, a),
        Command::Replay(_) => Err(CliError::Usage("replay manifests cannot nest".into())),
    }
}

/// Evaluates a resolved command, on a dedicated pool when `threads` is set.
pub fn execute(command: Command, config: RunConfig, threads: Option<usize>) -> Result<Artifact, CliError> {
    let start = Instant::now();
    let outcome = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new().num_threads(t).build()?.install(|| evaluate(&command, &config))?,
        None => evaluate(&command, &config)?,
    };
    let manifest = RunManifest {
        tool: "ura".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        provenance: provenance(&command).into(),
        seed: config.mc.seed,
        trials: config.mc.trials,
        command,
        config,
        threads,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    Ok(Artifact { manifest, infeasible: outcome.infeasible, table: outcome.table, details: outcome.details })
}

/// Resolves the configuration and command from parsed arguments.
pub fn prepare(cli: &Cli) -> Result<(Command, RunConfig, Option<usize>), CliError> {
    if let Command::Replay(r) = &cli.command {
        let text = std::fs::read_to_string(&r.manifest)?;
        let art: Artifact = serde_json::from_str(&text)?;
        let threads = cli.global.threads.or(art.manifest.threads);
        return Ok((art.manifest.command, art.manifest.config, threads));
    }
    let mut cfg = RunConfig::load(cli.global.config.as_deref())?;
    cfg.apply(&cli.global.overrides);
    cfg.resolve()?;
    Ok((cli.command.clone(), cfg, cli.global.threads))
}

fn write_outputs(art: &Artifact, out: Option<&Path>, json: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => art.table.write_csv(std::fs::File::create(p)?)?,
        None => art.table.write_csv(std::io::stdout().lock())?,
    }
    let json = json.map(Path::to_path_buf).or_else(|| out.map(|p| p.with_extension("json")));
    if let Some(p) = json {
        std::fs::write(p, serde_json::to_string_pretty(art)?)?;
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = prepare(&cli).and_then(|(command, cfg, threads)| {
        let art = execute(command, cfg, threads)?;
        write_outputs(&art, cli.global.out.as_deref(), cli.global.json.as_deref())?;
        Ok(art.infeasible)
    });
    match result {
        Ok(false) => 0,
        Ok(true) => {
            eprintln!("ura: infeasible at the requested operating point");
            3
        }
        Err(e) => {
            match &e {
                CliError::Core(ura_core::Error::Validation(items)) => {
                    eprintln!("ura: invalid configuration");
                    for i in items {
                        eprintln!("  - {i}");
                    }
                }
                _ => eprintln!("ura: {e}"),
            }
            e.exit_code()
        }
    }
}
