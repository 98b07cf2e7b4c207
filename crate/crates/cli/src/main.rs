use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use leibenson_cli::commands;
use leibenson_cli::RunConfig;

#[derive(Parser)]
#[command(name = "leibenson", version, about = "PINN solver for strongly degenerate parabolic equations")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 is the reproducible mode, 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on the configured problem.
    Train {
        /// Repeat the run recorded in a manifest instead of reading --config.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
    },
    /// Tabulate E and E_rel for trained checkpoints.
    ErrorTable {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Final times, comma separated.
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
    },
    /// Train the regularized problem for several eps and tabulate the errors.
    EpsSweep {
        /// Regularization values, comma separated.
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
    },
    /// Write a trained model and the exact solution on a lattice.
    ExportField {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Times, comma separated.
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        /// Points per axis.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Write the collocation points of the configured problem.
    ExportPoints,
}

fn resolve(common: &Common, manifest: Option<&PathBuf>) -> Result<RunConfig> {
    let mut cfg = match (manifest, &common.config) {
        (Some(m), _) => leibenson_cli::RunManifest::read(m)?.config,
        (None, Some(path)) => RunConfig::load(path)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(threads) = common.threads {
        cfg.train.threads = threads;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train { manifest } => {
            let cfg = resolve(&cli.common, manifest.as_ref())?;
            let out = commands::cmd_train(&cfg)?;
            let last = out.report.final_loss;
            println!(
                "trained {} epochs in {:.1}s, final loss {:e} (physics {:e}, boundary {:e})",
                out.report.epochs_run, out.report.wall_clock_secs, last.total, last.physics, last.boundary
            );
            println!("artifacts in {}", out.dir.display());
        }
        Command::ErrorTable { checkpoints, times } => {
            let cfg = resolve(&cli.common, None)?;
            let expect = cli.common.config.as_ref().map(|_| cfg.problem.id);
            let path = commands::cmd_error_table(&cfg, checkpoints, times, expect)?;
            print!("{}", std::fs::read_to_string(&path)?);
            println!("written to {}", path.display());
        }
        Command::EpsSweep { eps } => {
            let cfg = resolve(&cli.common, None)?;
            let path = commands::cmd_eps_sweep(&cfg, eps)?;
            print!("{}", std::fs::read_to_string(&path)?);
            println!("written to {}", path.display());
        }
        Command::ExportField {
            checkpoint,
            times,
            grid,
        } => {
            let cfg = resolve(&cli.common, None)?;
            let times = if times.is_empty() { &cfg.export.times } else { times };
            for path in commands::cmd_export_field(&cfg, checkpoint, times, grid.unwrap_or(cfg.export.grid))? {
                println!("{}", path.display());
            }
        }
        Command::ExportPoints => {
            let cfg = resolve(&cli.common, None)?;
            println!("{}", commands::cmd_export_points(&cfg)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
