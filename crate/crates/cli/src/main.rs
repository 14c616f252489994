use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bilayer_cli::config::ExperimentConfig;
use bilayer_cli::oracle::oracle_suite;
use bilayer_cli::presets::{preset, NAMES};
use bilayer_cli::runner::{configure_threads, export_checkpoint, run_experiment, summarize, RunError};

#[derive(Parser)]
#[command(name = "bilayer", version, about = "Deep Ritz solver for prestrained bilayer plates")]
struct Cli {
    /// Root directory for run outputs.
    #[arg(long, env = "BILAYER_OUTPUT_ROOT", default_value = "runs", global = true)]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML file or a preset name; resumes if checkpoints exist.
    Run {
        config: String,
        /// Override the number of main-stage epochs.
        #[arg(long)]
        epochs: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the reshaped-energy witnesses against their closed forms.
    Oracle,
    /// Write the OBJ mesh of a checkpoint.
    Export { checkpoint: PathBuf, config: String, out: PathBuf },
    /// Summarize the metrics of a run directory.
    Metrics { dir: PathBuf },
    /// Print a preset as TOML, or list presets.
    Preset { name: Option<String> },
}

fn resolve(config: &str) -> Result<ExperimentConfig, RunError> {
    let path = Path::new(config);
    if path.exists() {
        return Ok(ExperimentConfig::load(path)?);
    }
    preset(config).ok_or_else(|| {
        RunError::Config(bilayer_cli::config::ConfigError {
            line: None,
            message: format!("{config}: no such file or preset (presets: {})", NAMES.join(", ")),
        })
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, epochs, seed } => resolve(&config).and_then(|mut cfg| {
            if let Some(e) = epochs {
                cfg.schedule.epochs = e;
            }
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            configure_threads(&cfg);
            let out = run_experiment(&cfg, &cli.output_root)?;
            println!("{}", summarize(&out.dir)?);
            Ok(())
        }),
        Command::Oracle => match oracle_suite() {
            Ok(report) => {
                println!("{report}");
                if !report.passed() {
                    return ExitCode::from(3);
                }
                Ok(())
            }
            Err(e) => Err(e.into()),
        },
        Command::Export { checkpoint, config, out } => {
            resolve(&config).and_then(|cfg| export_checkpoint(&checkpoint, &cfg, &out))
        }
        Command::Metrics { dir } => summarize(&dir).map(|s| print!("{s}")),
        Command::Preset { name: None } => {
            NAMES.iter().for_each(|n| println!("{n}"));
            Ok(())
        }
        Command::Preset { name: Some(name) } => resolve(&name).map(|cfg| print!("{}", cfg.to_toml())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
