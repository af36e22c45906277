//! `diloc` experiment runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diloc::experiment::{self, ExperimentError, PRESET_NAMES};

#[derive(Parser)]
#[command(name = "diloc", version, about = "Distributed sensor localization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML config or `preset:NAME`.
    Run {
        config: String,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Independent replicas, run in parallel in `replica_<i>` subdirectories.
        #[arg(long, default_value_t = 1)]
        replicas: usize,
        /// Output directory (default: `$DILOC_OUTPUT_ROOT/<scenario>` or `runs/<scenario>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the resolved config and exit without running.
        #[arg(long)]
        print_config: bool,
    },
    /// Check a config without running it.
    Validate { config: String },
    /// Built-in scenarios.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print a preset as TOML.
    Show {
        name: String,
    },
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run { config, seed, replicas, out, print_config } => {
            let mut cfg = experiment::load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let dir = experiment::resolve_output_dir(&cfg, out.as_deref());
            for outcome in experiment::run_replicas(&cfg, replicas, &dir)? {
                let s = &outcome.summary;
                let err = s.final_oracle_error.map_or("n/a".to_string(), |e| format!("{e:.3e}"));
                println!(
                    "{}: seed {} iterations {} converged_at {} final error {} -> {}",
                    s.scenario,
                    s.seed,
                    s.iterations,
                    s.converged_at.map_or("-".to_string(), |k| k.to_string()),
                    err,
                    outcome.out_dir.display()
                );
            }
        }
        Command::Validate { config } => {
            let cfg = experiment::load_config(&config)?;
            println!("{}: ok ({})", cfg.scenario, cfg.config_hash());
        }
        Command::Presets { action: PresetAction::List } => {
            for name in PRESET_NAMES {
                println!("{name}");
            }
        }
        Command::Presets { action: PresetAction::Show { name } } => {
            let cfg =
                experiment::preset(&name).ok_or_else(|| ExperimentError::Config(format!("unknown preset `{name}`")))?;
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
