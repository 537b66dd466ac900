//! Morphology and controller co-design for 2D voxel soft robots.
//!
//! Bodies are voxel grids simulated as mass-spring networks. Controllers are
//! graph-attention actor/critic pairs trained with PPO, and a genetic
//! algorithm evolves bodies while children inherit their parent's weights
//! through a topology-consistent mapping.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod evolve;
pub mod experiment;
pub mod graph;
pub mod inherit;
pub mod morpho;
pub mod policy;
pub mod ppo;
pub mod render;
pub mod sim;

pub use error::{Error, Result};
