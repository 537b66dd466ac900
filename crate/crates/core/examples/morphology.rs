//! Random valid genomes, mutation, and the text and SVG encodings.
//!
//! `cargo run --example morphology -- [seed]`

use codesign::morpho::{mutate, MorphGenome, MutationConfig};
use codesign::render::morphology_svg;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> codesign::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parent = MorphGenome::random(5, 5, &mut rng);
    println!("parent ({} actuators, digest {}):\n{parent}\n", parent.actuators().len(), parent.digest());

    let child = mutate(&parent, &MutationConfig::default(), &mut rng);
    let changed = parent.cells().iter().zip(child.cells()).filter(|(a, b)| a != b).count();
    println!("child ({changed} cells changed):\n{child}\n");

    let reparsed: MorphGenome = child.to_string().parse()?;
    assert_eq!(reparsed, child);

    let path = std::env::temp_dir().join("codesign-morphology.svg");
    std::fs::write(&path, morphology_svg(&child)).map_err(|e| codesign::Error::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}
