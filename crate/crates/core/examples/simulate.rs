//! Steps a walker under a sinusoidal gait and prints its progress.
//!
//! `cargo run --example simulate`

use codesign::morpho::MorphGenome;
use codesign::sim::{SimConfig, Simulation, Task};

fn main() -> codesign::Result<()> {
    let genome = MorphGenome::from_rows(&["3003", "1111"])?;
    let mut sim = Simulation::new(&genome, Task::WalkerLite, SimConfig::default());
    let start = sim.robot_com();
    let mut total = 0.0;
    for t in 0..400 {
        let phase = t as f64 * 0.15;
        let actions: Vec<f64> = (0..sim.actuator_count())
            .map(|k| (phase + k as f64 * std::f64::consts::PI).sin())
            .collect();
        total += sim.step(&actions);
        if t % 100 == 99 {
            let com = sim.robot_com();
            println!("step {:>3}: com ({:+.4}, {:.4}) ke {:.5}", t + 1, com[0], com[1], sim.kinetic_energy());
        }
    }
    let end = sim.robot_com();
    println!("return {total:.6}, com displacement {:.6}", end[0] - start[0]);
    Ok(())
}
