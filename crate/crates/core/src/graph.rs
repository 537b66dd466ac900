//! Robot graphs: one node per voxel vertex, edges between lattice neighbours.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::sim::{ActuatorKey, Observation, RobotBody, VertexKey};

/// Node feature width: 4 global features followed by 8 per-node features.
pub const NODE_FEATURES: usize = Observation::GLOBAL + Observation::PER_NODE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Per-node block replaced by its mean over nodes, identical on every node.
    GlobalTransfer,
    /// Each node keeps its own per-node block.
    LocalTransfer,
}

/// Feature-free structure of a robot graph; fixed for a given morphology.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub node_keys: Vec<VertexKey>,
    /// Directed `(source, destination)` pairs, both directions plus self-loops.
    pub edges: Vec<(usize, usize)>,
    /// Per edge, `lattice(destination) - lattice(source)`.
    pub edge_features: Vec<[f64; 2]>,
    pub actuator_keys: Vec<ActuatorKey>,
}

impl Topology {
    pub fn from_body(body: &RobotBody) -> Self {
        let index: BTreeMap<VertexKey, usize> =
            body.keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let mut edges = Vec::new();
        let mut edge_features = Vec::new();
        for (dst, key) in body.keys.iter().enumerate() {
            // Incoming edges for `dst`, self-loop first.
            let neighbours = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];
            for (dx, dy) in neighbours {
                let src_key = VertexKey {
                    x: key.x + dx,
                    y: key.y + dy,
                };
                if let Some(&src) = index.get(&src_key) {
                    edges.push((src, dst));
                    edge_features.push([f64::from(-dx), f64::from(-dy)]);
                }
            }
        }
        Self {
            node_keys: body.keys.clone(),
            edges,
            edge_features,
            actuator_keys: body.actuator_keys(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_keys.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotGraph {
    pub topology: Topology,
    /// `node_count × NODE_FEATURES`.
    pub node_features: Array2<f64>,
}

/// Node feature matrix for one observation.
pub fn node_features(obs: &Observation, mode: FeatureMode) -> Array2<f64> {
    let n = obs.nodes.len();
    let mut x = Array2::zeros((n, NODE_FEATURES));
    let mean: [f64; Observation::PER_NODE] = match mode {
        FeatureMode::LocalTransfer => [0.0; Observation::PER_NODE],
        FeatureMode::GlobalTransfer => {
            let mut acc = [0.0; Observation::PER_NODE];
            for node in &obs.nodes {
                for (a, v) in acc.iter_mut().zip(node) {
                    *a += v;
                }
            }
            acc.map(|a| a / n.max(1) as f64)
        }
    };
    for (i, node) in obs.nodes.iter().enumerate() {
        let local = match mode {
            FeatureMode::LocalTransfer => node,
            FeatureMode::GlobalTransfer => &mean,
        };
        for (k, v) in obs.global.iter().chain(local.iter()).enumerate() {
            x[[i, k]] = *v;
        }
    }
    x
}

pub fn build_graph(body: &RobotBody, obs: &Observation, mode: FeatureMode) -> RobotGraph {
    assert_eq!(body.keys.len(), obs.nodes.len(), "observation does not match body");
    RobotGraph {
        topology: Topology::from_body(body),
        node_features: node_features(obs, mode),
    }
}

impl RobotGraph {
    pub fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    /// Same graph with node `i` moved to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> RobotGraph {
        let n = self.node_count();
        assert_eq!(perm.len(), n, "permutation length");
        let mut keys = vec![self.topology.node_keys[0]; n];
        let mut x = Array2::zeros(self.node_features.dim());
        for (old, &new) in perm.iter().enumerate() {
            keys[new] = self.topology.node_keys[old];
            x.row_mut(new).assign(&self.node_features.row(old));
        }
        let edges = self
            .topology
            .edges
            .iter()
            .map(|&(s, d)| (perm[s], perm[d]))
            .collect();
        RobotGraph {
            topology: Topology {
                node_keys: keys,
                edges,
                edge_features: self.topology.edge_features.clone(),
                actuator_keys: self.topology.actuator_keys.clone(),
            },
            node_features: x,
        }
    }

    /// Edge list, one `src -> dst dx dy` line per directed edge, keyed by
    /// lattice coordinate.
    pub fn edge_list_text(&self) -> String {
        let t = &self.topology;
        let mut out = String::new();
        for (&(s, d), f) in t.edges.iter().zip(&t.edge_features) {
            let (a, b) = (t.node_keys[s], t.node_keys[d]);
            let _ = writeln!(out, "{},{} -> {},{} {} {}", a.x, a.y, b.x, b.y, f[0], f[1]);
        }
        out
    }
}

/// Structural identity of a graph, ignoring features and node order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GraphKey {
    pub nodes: BTreeSet<VertexKey>,
    pub edges: BTreeSet<(VertexKey, VertexKey)>,
    pub actuators: Vec<ActuatorKey>,
}

impl GraphKey {
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for n in &self.nodes {
            h.update(format!("n{},{};", n.x, n.y));
        }
        for (a, b) in &self.edges {
            h.update(format!("e{},{},{},{};", a.x, a.y, b.x, b.y));
        }
        for a in &self.actuators {
            h.update(format!("a{a};"));
        }
        hex::encode(&h.finalize()[..8])
    }
}

pub fn graph_hash(topology: &Topology) -> GraphKey {
    let k = &topology.node_keys;
    GraphKey {
        nodes: k.iter().copied().collect(),
        edges: topology.edges.iter().map(|&(s, d)| (k[s], k[d])).collect(),
        actuators: topology.actuator_keys.clone(),
    }
}
