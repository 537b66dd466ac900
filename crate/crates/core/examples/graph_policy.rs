//! Builds the robot graph and runs the GAT actor and critic on it.
//!
//! `cargo run --example graph_policy`

use codesign::graph::{build_graph, graph_hash, FeatureMode};
use codesign::morpho::MorphGenome;
use codesign::policy::{gat_forward, init_params, pool, ControllerKind, DesignSpace};
use codesign::sim::{SimConfig, Simulation, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> codesign::Result<()> {
    let genome = MorphGenome::from_rows(&["314", "242"])?;
    let sim = Simulation::new(&genome, Task::WalkerLite, SimConfig::default());
    let keys = sim.body().actuator_keys();
    let params = init_params(ControllerKind::Gat, DesignSpace::default(), &keys, &mut ChaCha8Rng::seed_from_u64(7));

    for mode in [FeatureMode::GlobalTransfer, FeatureMode::LocalTransfer] {
        let graph = build_graph(sim.body(), &sim.observe(), mode);
        println!("{mode:?}: {} nodes, {} edges, hash {}", graph.topology.node_count(), graph.topology.edge_count(), graph_hash(&graph.topology).digest());
        let codesign::policy::Encoder::Gat(layer) = &params.actor.encoder else { unreachable!() };
        let embedding = pool(&gat_forward(layer, &graph));
        println!("  pooled embedding[..4] = {:.4?}", &embedding.as_slice().unwrap()[..4]);
        let dist = params.actor_forward(&graph)?;
        for (key, mean) in keys.iter().zip(&dist.mean) {
            println!("  actuator {key}: mean {mean:+.4}");
        }
        println!("  value {:+.4}", params.critic_forward(&graph)?);
    }
    Ok(())
}
