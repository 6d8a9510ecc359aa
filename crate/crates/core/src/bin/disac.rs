//! Command-line front end: run experiments, list and verify presets,
//! validate configuration files.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use disac::config::{load_config, verify_presets, PRESETS};
use disac::experiment::run_to_dir;

#[derive(Parser)]
#[command(
    name = "disac",
    version,
    about = "Distributed radar and C-RAN sensing/communication experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a configuration file or preset name.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of Monte Carlo trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Output directory (default: `output` from the config, else `results/<kind>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect the bundled presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Parse and validate a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// List preset names and experiment kinds.
    List,
    /// Check checksums and node coordinates of every preset.
    Verify,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            trials,
            out,
        } => {
            let mut cfg =
                load_config(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            cfg.validate()?;
            let dir = out.unwrap_or_else(|| cfg.output_dir());
            for f in run_to_dir(&cfg, &dir)? {
                println!("{}", f.display());
            }
        }
        Command::Presets {
            action: PresetAction::List,
        } => {
            for p in PRESETS {
                let kind = load_config(std::path::Path::new(p.name))?.experiment.kind();
                println!("{:<22} {}", p.name, kind);
            }
        }
        Command::Presets {
            action: PresetAction::Verify,
        } => {
            let mut bad = 0;
            for c in verify_presets() {
                if c.ok() {
                    println!("{:<22} ok", c.name);
                } else {
                    bad += 1;
                    for p in &c.problems {
                        println!("{:<22} {p}", c.name);
                    }
                }
            }
            if bad > 0 {
                bail!("{bad} preset(s) failed verification");
            }
        }
        Command::Validate { config } => {
            let cfg =
                load_config(&config).with_context(|| format!("loading {}", config.display()))?;
            println!(
                "{}: valid {} configuration, {} trials",
                config.display(),
                cfg.experiment.kind(),
                cfg.trials
            );
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
