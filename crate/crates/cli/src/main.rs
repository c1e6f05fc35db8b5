use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use recon_cli::commands;
use recon_cli::config::ExperimentConfig;

/// Unsupervised multi-coil cine reconstruction experiments.
#[derive(Parser)]
#[command(name = "recon", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the training dataset: phantom, interleaved acquisition, merge,
    /// retrospective undersampling.
    Prepare {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's global seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the reconstruction model on a prepared dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reconstruct a held-out phantom per frame and write metrics reports.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Merge one or more result directories into a comparison table and
    /// image montage.
    Report {
        /// Optional: supplies the default output directory (`<out.dir>/report`).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for the merged report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Result directories (each with metrics.csv and tile images).
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

fn load_config(
    path: &PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> recon_core::error::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() {
    if let Ok(v) = std::env::var("RECON_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run() -> recon_core::error::Result<()> {
    configure_threads();
    let cli = Cli::parse();
    match cli.command {
        Command::Prepare { config, out, seed } => {
            let cfg = load_config(&config, out, seed)?;
            let dir = commands::cmd_prepare(&cfg)?;
            println!("dataset written to {}", dir.display());
        }
        Command::Train { config, out, seed } => {
            let cfg = load_config(&config, out, seed)?;
            let dir = commands::cmd_train(&cfg)?;
            println!("checkpoint written to {}", dir.display());
        }
        Command::Eval { config, out, seed } => {
            let cfg = load_config(&config, out, seed)?;
            let dir = commands::cmd_eval(&cfg)?;
            println!("evaluation written to {}", dir.display());
        }
        Command::Report { config, out, dirs } => {
            let out = match (out, config) {
                (Some(out), _) => out,
                (None, Some(cfg_path)) => {
                    ExperimentConfig::load(&cfg_path)?.out_dir.join("report")
                }
                (None, None) => {
                    return Err(recon_core::error::Error::Config(
                        "report needs --out or --config".into(),
                    ))
                }
            };
            let dir = commands::cmd_report(&dirs, &out)?;
            println!("report written to {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(recon_cli::exit_code(&e) as u8)
        }
    }
}
