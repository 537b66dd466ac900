//! Command-line entry point: `run`, `replay` and `aggregate`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use codesign::experiment::{aggregate, exit_code, replay_to_dir, run_experiment, workers_from_env, ExperimentConfig};
use codesign::sim::Task;
use codesign::Result;

#[derive(Parser)]
#[command(name = "codesign", version, about = "Evolve voxel robots with inherited graph-attention controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method and seed in a TOML experiment config.
    Run { config: PathBuf },
    /// Replay a checkpoint greedily and write a trajectory plus SVG frames.
    Replay {
        checkpoint: PathBuf,
        genome: PathBuf,
        #[arg(long)]
        task: Task,
        /// Steps between frames.
        #[arg(long, default_value_t = 10)]
        every: usize,
        #[arg(long, default_value = "replay")]
        out: PathBuf,
    },
    /// Rebuild aggregate.csv and aggregate.svg from a run directory.
    Aggregate { dir: PathBuf },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config).map_err(|e| match e {
                codesign::Error::Config(msg) => codesign::Error::Config(format!("{}: {msg}", config.display())),
                other => other,
            })?;
            let summary = run_experiment(&cfg, workers_from_env()?)?;
            for run in &summary.runs {
                println!("{} seed {}: best fitness {}", run.method, run.seed, run.best_fitness);
            }
        }
        Command::Replay {
            checkpoint,
            genome,
            task,
            every,
            out,
        } => {
            let r = replay_to_dir(&checkpoint, &genome, task, every, &out)?;
            println!(
                "return {} (recorded {}), {} steps, {} frames",
                r.total_return,
                r.recorded_return,
                r.rows.len(),
                r.frames.len()
            );
        }
        Command::Aggregate { dir } => {
            let rows = aggregate(&dir)?;
            println!("{} aggregate rows written to {}", rows.len(), dir.join("aggregate.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
