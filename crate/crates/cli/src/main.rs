//! Experiment runner: `seqfuse run --config <path>` executes the configured
//! pipeline (load -> align -> window -> normalize -> train -> evaluate) and
//! writes history.csv, metrics.csv, checkpoint and the resolved config into
//! the output directory.
//!
//! Exit codes: 0 success, 1 config error, 2 data error, 3 training failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seqfuse_core::training::{exit_code, run_experiment, ExperimentConfig, Task};

#[derive(Parser)]
#[command(name = "seqfuse", version, about = "Multimodal sequence-fusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config.
    Run {
        /// Experiment config file.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the task (humor | reaction | stress-arousal | stress-valence).
        #[arg(long)]
        task: Option<String>,
    },
}

fn parse_task(name: &str) -> Result<Task, String> {
    match name {
        "humor" => Ok(Task::Humor),
        "reaction" => Ok(Task::Reaction),
        "stress-arousal" => Ok(Task::StressArousal),
        "stress-valence" => Ok(Task::StressValence),
        other => Err(format!(
            "unknown task {other:?} (expected humor, reaction, stress-arousal or stress-valence)"
        )),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            task,
        } => {
            let mut cfg = match ExperimentConfig::from_toml_file(&config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(1);
                }
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            if let Some(task) = task {
                match parse_task(&task) {
                    Ok(t) => cfg.task = t,
                    Err(msg) => {
                        eprintln!("config error: {msg}");
                        return ExitCode::from(1);
                    }
                }
            }
            match run_experiment(&cfg) {
                Ok(artifacts) => {
                    print!("{}", artifacts.report.to_csv());
                    println!("artifacts written to {}", cfg.out_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    ExitCode::from(exit_code(&e) as u8)
                }
            }
        }
    }
}
