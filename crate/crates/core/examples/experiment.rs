//! Runs a miniature four-method experiment from an inline config and replays
//! the winning checkpoint.
//!
//! `cargo run --release --example experiment -- [output-dir]`

use std::path::PathBuf;

use codesign::experiment::{replay_to_dir, run_dir, run_experiment, workers_from_env, ExperimentConfig, Method};
use codesign::sim::Task;

const CONFIG: &str = r#"
task = "walker-lite"
seeds = [1, 2]
output = "PLACEHOLDER"

[evolution]
population = 2
generations = 2
episode_length = 48

[ppo]
steps_per_batch = 96
minibatch_size = 32
epochs = 1
total_updates = 2
"#;

fn main() -> codesign::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("codesign-experiment"));
    let mut cfg = ExperimentConfig::from_toml(CONFIG)?;
    cfg.output = out.clone();

    let summary = run_experiment(&cfg, workers_from_env()?)?;
    for row in &summary.aggregate {
        println!("{:<20} gen {} mean {:+.5} std {:.5}", row.method, row.generation, row.mean, row.std);
    }

    let dir = run_dir(&out, Method::GatLocalTransfer, 1);
    let replay = replay_to_dir(&dir.join("best.json"), &dir.join("best.genome"), Task::WalkerLite, 12, &out.join("replay"))?;
    println!(
        "replayed {} steps into {} frames: return {} (recorded {})",
        replay.rows.len(),
        replay.frames.len(),
        replay.total_return,
        replay.recorded_return
    );
    Ok(())
}
