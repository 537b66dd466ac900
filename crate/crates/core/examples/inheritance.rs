//! Maps a trained parent's weights onto a mutated child.
//!
//! `cargo run --example inheritance`

use codesign::graph::Topology;
use codesign::inherit::{map_weights, match_graphs, Lineage};
use codesign::morpho::MorphGenome;
use codesign::policy::{init_params, ControllerKind, DesignSpace};
use codesign::sim::{build_body, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn topology(rows: &[&str]) -> codesign::Result<Topology> {
    let genome = MorphGenome::from_rows(rows)?;
    Ok(Topology::from_body(&build_body(&genome, &SimConfig::default())))
}

fn main() -> codesign::Result<()> {
    let parent = topology(&["334", "111"])?;
    let child = topology(&["324", "113"])?;
    let params = init_params(ControllerKind::Gat, DesignSpace::default(), &parent.actuator_keys, &mut ChaCha8Rng::seed_from_u64(1));

    let corr = match_graphs(&parent, &child);
    let mapped = map_weights(&params, &corr, &child, &mut ChaCha8Rng::seed_from_u64(2))?;
    let lineage = Lineage::new(0, 1, &corr);
    println!("matched {}, added {}, removed {}", lineage.matched, lineage.added, lineage.removed);
    for (key, src) in child.actuator_keys.iter().zip(&corr.actuator_map) {
        match src {
            Some(i) => println!("  {key}: copied from parent row {i}"),
            None => println!("  {key}: fresh row"),
        }
    }
    let shared = mapped.actor.encoder == params.actor.encoder && mapped.critic == params.critic;
    println!("encoder, hidden layers and critic carried over: {shared}");
    Ok(())
}
