//! `moire` command-line front end.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use commands::{analytic, pipeline, scan, simulate, wigner};
use error::CliError;
use output::{OutDir, RunManifest};

#[derive(Parser)]
#[command(name = "moire", version, about = "Moiré pattern rigidity toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: moire-out/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed for stochastic commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override a config field, e.g. `--set model.phi0=1.2`.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Pattern table and its spectrum for one parameter set.
    Generate,
    /// K_M over a (κ, Δφ) grid at fixed N_p.
    Surface,
    /// K_M, secondary peak and visibility along a T₂ scan.
    ScanT2,
    /// Wavepacket simulation of the pulse sequence.
    Simulate,
    /// Phase-space rotation check of a Gaussian pair.
    Wigner,
    /// Synthetic-image analysis round trip.
    Pipeline,
    /// Jump heights against N_p.
    JumpHeights,
    /// K_MΔz against Δφ at fixed N_p.
    Universal,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Surface => "surface",
            Command::ScanT2 => "scan-t2",
            Command::Simulate => "simulate",
            Command::Wigner => "wigner",
            Command::Pipeline => "pipeline",
            Command::JumpHeights => "jump-heights",
            Command::Universal => "universal",
        }
    }
}

fn execute<C>(
    name: &str,
    common: &Common,
    seed_into: fn(&mut C, u64),
    run: fn(&C, &mut OutDir) -> Result<(), CliError>,
) -> Result<(), CliError>
where
    C: DeserializeOwned + Serialize + Default,
{
    let mut cfg: C = config::load(common.config.as_deref(), &common.overrides)?;
    let seed = common.seed.unwrap_or(0);
    if common.seed.is_some() {
        seed_into(&mut cfg, seed);
    }
    let resolved = serde_json::to_value(&cfg)?;
    if common.print_config {
        println!("{}", serde_json::to_string_pretty(&resolved)?);
        return Ok(());
    }
    let seed = resolved
        .pointer("/pipeline/seed")
        .and_then(|v| v.as_u64())
        .unwrap_or(seed);
    let root = common
        .out
        .clone()
        .unwrap_or_else(|| Path::new("moire-out").join(name));
    let mut out = OutDir::create(&root)?;
    run(&cfg, &mut out)?;
    out.finish(RunManifest {
        command: name.to_string(),
        config_path: common.config.as_ref().map(|p| p.display().to_string()),
        seed,
        out_dir: root.display().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        overrides: common.overrides.clone(),
        outputs: Vec::new(),
        config: resolved,
    })
}

fn no_seed<C>(_: &mut C, _: u64) {}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let c = &cli.common;
    if let Some(j) = c.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Failure(format!("thread pool: {e}")))?;
    }
    let name = cli.command.name();
    match cli.command {
        Command::Generate => execute(name, c, no_seed, analytic::generate),
        Command::Surface => execute(name, c, no_seed, analytic::surface),
        Command::ScanT2 => execute(name, c, no_seed, scan::scan_t2),
        Command::Simulate => execute(name, c, no_seed, simulate::simulate),
        Command::Wigner => execute(name, c, no_seed, wigner::wigner),
        Command::Pipeline => execute(
            name,
            c,
            |cfg: &mut pipeline::PipelineCommandConfig, s| cfg.pipeline.seed = s,
            pipeline::pipeline,
        ),
        Command::JumpHeights => execute(name, c, no_seed, analytic::jump_heights),
        Command::Universal => execute(name, c, no_seed, analytic::universal),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("moire {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}
