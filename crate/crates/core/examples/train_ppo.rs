//! Trains one controller with PPO and prints the per-update log.
//!
//! `cargo run --release --example train_ppo -- [gat|mlp] [updates]`

use codesign::graph::FeatureMode;
use codesign::morpho::MorphGenome;
use codesign::policy::{init_params, ControllerKind, DesignSpace};
use codesign::ppo::{train_individual, PpoConfig, TrainSetup};
use codesign::sim::{build_body, SimConfig, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> codesign::Result<()> {
    let mut args = std::env::args().skip(1);
    let kind = match args.next().as_deref() {
        Some("mlp") => ControllerKind::Mlp,
        _ => ControllerKind::Gat,
    };
    let updates = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);

    let genome = MorphGenome::from_rows(&["33", "11"])?;
    let keys = build_body(&genome, &SimConfig::default()).actuator_keys();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = init_params(kind, DesignSpace::default(), &keys, &mut rng);
    let setup = TrainSetup {
        task: Task::WalkerLite,
        episode_length: 128,
        sim: SimConfig::default(),
        mode: FeatureMode::LocalTransfer,
    };
    let cfg = PpoConfig {
        steps_per_batch: 512,
        epochs: 2,
        total_updates: updates,
        ..PpoConfig::default()
    };
    let out = train_individual(&genome, params, &setup, &cfg, &mut rng)?;
    print!("{}", codesign::ppo::training_log_csv(&out.log));
    println!("fitness {:.6}, greedy return {:.6}", out.fitness, out.eval_return);
    Ok(())
}
