//! Command-line driver: validate manifests, warm the stage-1 cache, run
//! experiment configs and plot n-shot sweeps.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime/training failure.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mdl_core::error::Error;

use crate::config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "mdl",
    version,
    about = "Multi-dataset prompt training and few-shot adaptation for abusive-language classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's step-2 seed list, comma separated
    #[arg(long)]
    seeds: Option<String>,
    /// Override the config's backend selection
    #[arg(long)]
    backend: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Load a manifest, canonicalize labels and print per-dataset counts
    ValidateManifest {
        /// Manifest file; defaults to the one named by --config
        #[arg(long, required_unless_present = "config")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for derived 80/20 splits
        #[arg(long, default_value_t = 42)]
        split_seed: u64,
    },
    /// Train (or load) the cached stage-1 model for every run in the config
    TrainExternal {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Run every experiment in the config and write report files
    Run {
        #[command(flatten)]
        common: ConfigArgs,
        /// Independent runs to execute in parallel
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Render the n-shot sweep from report files to an SVG
    PlotNshot {
        /// Report CSV files or directories containing them
        #[arg(long, required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        /// Output image path
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_seed_list(raw: &str) -> Result<Vec<u64>, Error> {
    raw.split(',')
        .map(|s| {
            s.trim().parse::<u64>().map_err(|_| Error::InvalidConfig {
                message: format!("bad seed '{s}' in --seeds"),
            })
        })
        .collect()
}

fn load_with_overrides(args: &ConfigArgs) -> Result<(ExperimentConfig, Vec<u8>), Error> {
    let (mut config, bytes) = ExperimentConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    if let Some(seeds) = &args.seeds {
        config.seeds = parse_seed_list(seeds)?;
    }
    if let Some(backend) = &args.backend {
        config.backend = backend.clone();
    }
    Ok((config, bytes))
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::ValidateManifest {
            manifest,
            config,
            split_seed,
        } => {
            let (path, seed) = match (manifest, config) {
                (Some(m), _) => (m, split_seed),
                (None, Some(c)) => {
                    let (cfg, _) = ExperimentConfig::load(&c)?;
                    (cfg.manifest, cfg.split_seed)
                }
                (None, None) => unreachable!("clap enforces one of the two"),
            };
            print!("{}", commands::validate_manifest(&path, seed)?);
            Ok(())
        }
        Command::TrainExternal { common } => {
            let (config, _) = load_with_overrides(&common)?;
            print!("{}", commands::train_external(&config)?);
            Ok(())
        }
        Command::Run { common, jobs } => {
            let (config, bytes) = load_with_overrides(&common)?;
            let outcome = commands::run(&config, &bytes, jobs.max(1))?;
            for report in &outcome.reports {
                println!(
                    "{} on {} (n={}): macro-F1 {:.4} ± {:.4} over {} seed(s)",
                    report.method,
                    report.target,
                    report.n_shots,
                    report.macro_mean,
                    report.macro_std,
                    report.seed_count
                );
            }
            for path in &outcome.written {
                println!("wrote {}", path.display());
            }
            println!("wrote {}", outcome.provenance.display());
            Ok(())
        }
        Command::PlotNshot { reports, out } => {
            print!("{}", commands::plot_nshot(&reports, &out)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
