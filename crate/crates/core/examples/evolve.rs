//! A small co-design run printing the event stream and generation table.
//!
//! `cargo run --release --example evolve`

use codesign::evolve::{generations_csv, run, EvoConfig, Event};
use codesign::ppo::PpoConfig;

fn main() -> codesign::Result<()> {
    let cfg = EvoConfig {
        population: 4,
        generations: 3,
        episode_length: 64,
        seed: 3,
        ppo: PpoConfig {
            steps_per_batch: 256,
            epochs: 2,
            total_updates: 3,
            ..PpoConfig::default()
        },
        ..EvoConfig::default()
    };
    let result = run(cfg, &mut |event: &Event| match event {
        Event::Birth { id, parent, lineage, .. } => println!("birth {id} from {parent:?} {lineage:?}"),
        Event::Trained { id, fitness, .. } => println!("trained {id}: fitness {fitness:.5}"),
        Event::Selection { generation, elites, .. } => println!("generation {generation}: elites {elites:?}"),
    })?;
    print!("{}", generations_csv(&result.history));
    println!("best individual {}:\n{}", result.best.id, result.best.genome);
    Ok(())
}
