//! Actor and critic networks.
//!
//! The graph controller runs one round of single-head attention over the
//! robot graph, mean-pools node embeddings, and feeds the pooled vector to an
//! MLP head whose hidden layers have morphology-independent shapes. The actor
//! output layer holds one row per actuator, keyed by the actuator's grid cell
//! and type; the critic output is a single row.
//!
//! The MLP baseline flattens the observation into fixed slots covering the
//! whole design space, zero-padding missing vertices.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{EdgeList, Segment, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{node_features, FeatureMode, RobotGraph, Topology, NODE_FEATURES};
use crate::sim::{ActuatorKey, Controller, Decision, Observation};

pub const GAT_WIDTH: usize = 32;
pub const HIDDEN: usize = 64;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const DEFAULT_LOG_STD: f64 = 0.0;
pub const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;
/// Gain of freshly initialized actor output rows, relative to hidden layers.
pub const OUTPUT_ROW_GAIN: f64 = 0.01 * HIDDEN_GAIN;
pub const CRITIC_OUTPUT_GAIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Gat,
    Mlp,
}

/// Bounding grid of every morphology in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DesignSpace {
    pub width: usize,
    pub height: usize,
}

impl Default for DesignSpace {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
        }
    }
}

impl DesignSpace {
    pub fn vertex_slots(&self) -> usize {
        (self.width + 1) * (self.height + 1)
    }

    /// Width of the zero-padded flat observation.
    pub fn flat_width(&self) -> usize {
        Observation::GLOBAL + Observation::PER_NODE * self.vertex_slots()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    /// `NODE_FEATURES × GAT_WIDTH`.
    pub w_self: Array2<f64>,
    /// `2 × GAT_WIDTH`, maps the lattice offset of an edge.
    pub w_edge: Array2<f64>,
    /// `2·GAT_WIDTH × 1`, scores `[destination projection, message]`.
    pub attention: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hidden {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Gat(GatLayer),
    /// Flat padded observation; no parameters of its own.
    Flat(DesignSpace),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorHead {
    pub keys: Vec<ActuatorKey>,
    /// One row per actuator, `A × HIDDEN`.
    pub weights: Array2<f64>,
    /// `1 × A`.
    pub bias: Array2<f64>,
    /// `1 × A`, state independent.
    pub log_std: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticHead {
    /// `1 × HIDDEN`.
    pub weight: Array2<f64>,
    /// `1 × 1`.
    pub bias: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<H> {
    pub encoder: Encoder,
    pub hidden: Hidden,
    pub head: H,
}

/// Independent actor and critic parameter sets.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub actor: Network<ActorHead>,
    pub critic: Network<CriticHead>,
}

pub trait Head {
    fn tensors(&self) -> Vec<&Array2<f64>>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;
}

impl Head for ActorHead {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.weights, &self.bias, &self.log_std]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.weights, &mut self.bias, &mut self.log_std]
    }
}

impl Head for CriticHead {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl<H: Head> Network<H> {
    pub fn kind(&self) -> ControllerKind {
        match self.encoder {
            Encoder::Gat(_) => ControllerKind::Gat,
            Encoder::Flat(_) => ControllerKind::Mlp,
        }
    }

    /// Every trainable tensor in a fixed order: encoder, hidden, head.
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        if let Encoder::Gat(g) = &self.encoder {
            out.extend([&g.w_self, &g.w_edge, &g.attention]);
        }
        let h = &self.hidden;
        out.extend([&h.w1, &h.b1, &h.w2, &h.b2]);
        out.extend(self.head.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        if let Encoder::Gat(g) = &mut self.encoder {
            out.extend([&mut g.w_self, &mut g.w_edge, &mut g.attention]);
        }
        let h = &mut self.hidden;
        out.extend([&mut h.w1, &mut h.b1, &mut h.w2, &mut h.b2]);
        out.extend(self.head.tensors_mut());
        out
    }

    fn register(&self, tape: &mut Tape) -> NetVars {
        let vars: Vec<Var> = self.tensors().into_iter().map(|t| tape.leaf(t.clone())).collect();
        let offset = match self.encoder {
            Encoder::Gat(_) => 3,
            Encoder::Flat(_) => 0,
        };
        NetVars { vars, offset }
    }
}

/// Tape handles of one network's tensors, in [`Network::tensors`] order.
#[derive(Debug, Clone)]
pub struct NetVars {
    pub vars: Vec<Var>,
    offset: usize,
}

impl NetVars {
    fn gat(&self) -> [Var; 3] {
        [self.vars[0], self.vars[1], self.vars[2]]
    }

    fn hidden(&self) -> [Var; 4] {
        let o = self.offset;
        [self.vars[o], self.vars[o + 1], self.vars[o + 2], self.vars[o + 3]]
    }

    fn head(&self) -> &[Var] {
        &self.vars[self.offset + 4..]
    }
}

#[derive(Debug, Clone)]
pub struct PolicyVars {
    pub actor: NetVars,
    pub critic: NetVars,
}

impl PolicyParams {
    pub fn kind(&self) -> ControllerKind {
        self.actor.kind()
    }

    pub fn actuator_keys(&self) -> &[ActuatorKey] {
        &self.actor.head.keys
    }

    pub fn register(&self, tape: &mut Tape) -> PolicyVars {
        PolicyVars {
            actor: self.actor.register(tape),
            critic: self.critic.register(tape),
        }
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut t = self.actor.tensors();
        t.extend(self.critic.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t = self.actor.tensors_mut();
        t.extend(self.critic.tensors_mut());
        t
    }

    pub fn check_keys(&self, keys: &[ActuatorKey]) -> Result<()> {
        if self.actuator_keys() != keys {
            return Err(Error::ActuatorMismatch {
                expected: self.actuator_keys().len(),
                actual: keys.len(),
            });
        }
        Ok(())
    }

    /// Builds the network input for a batch of observations on one morphology.
    pub fn batch_input(
        &self,
        topology: &Topology,
        observations: &[&Observation],
        mode: FeatureMode,
    ) -> Result<BatchInput> {
        match &self.actor.encoder {
            Encoder::Gat(_) => {
                let feats: Vec<Array2<f64>> =
                    observations.iter().map(|o| node_features(o, mode)).collect();
                Ok(BatchInput::Graph(GraphBatch::new(topology, &feats)))
            }
            Encoder::Flat(space) => {
                let width = space.flat_width();
                let mut x = Array2::zeros((observations.len(), width));
                for (b, obs) in observations.iter().enumerate() {
                    x.row_mut(b)
                        .assign(&flatten_observation(topology, obs, space)?);
                }
                Ok(BatchInput::Flat(x))
            }
        }
    }

    /// Action distribution for a single observation.
    pub fn distribution(
        &self,
        topology: &Topology,
        obs: &Observation,
        mode: FeatureMode,
    ) -> Result<ActionDistribution> {
        self.check_keys(&topology.actuator_keys)?;
        let input = self.batch_input(topology, &[obs], mode)?;
        let mut tape = Tape::new();
        let vars = self.actor.register(&mut tape);
        let (mean, log_std) = actor_batch(&mut tape, &vars, &input);
        Ok(ActionDistribution {
            mean: tape.value(mean).row(0).to_vec(),
            log_std: tape.value(log_std).row(0).to_vec(),
        })
    }

    pub fn value(&self, topology: &Topology, obs: &Observation, mode: FeatureMode) -> Result<f64> {
        let input = self.batch_input(topology, &[obs], mode)?;
        let mut tape = Tape::new();
        let vars = self.critic.register(&mut tape);
        let v = critic_batch(&mut tape, &vars, &input);
        Ok(tape.value(v)[[0, 0]])
    }

    /// Actor distribution for a graph whose features are already built.
    pub fn actor_forward(&self, g: &RobotGraph) -> Result<ActionDistribution> {
        self.require_gat()?;
        self.check_keys(&g.topology.actuator_keys)?;
        let input = BatchInput::Graph(GraphBatch::new(&g.topology, &[g.node_features.clone()]));
        let mut tape = Tape::new();
        let vars = self.actor.register(&mut tape);
        let (mean, log_std) = actor_batch(&mut tape, &vars, &input);
        Ok(ActionDistribution {
            mean: tape.value(mean).row(0).to_vec(),
            log_std: tape.value(log_std).row(0).to_vec(),
        })
    }

    pub fn critic_forward(&self, g: &RobotGraph) -> Result<f64> {
        self.require_gat()?;
        let input = BatchInput::Graph(GraphBatch::new(&g.topology, &[g.node_features.clone()]));
        let mut tape = Tape::new();
        let vars = self.critic.register(&mut tape);
        let v = critic_batch(&mut tape, &vars, &input);
        Ok(tape.value(v)[[0, 0]])
    }

    /// MLP-baseline actor on a flat observation padded to `pad_to`.
    pub fn mlp_actor_forward(&self, flat: &Array1<f64>, pad_to: usize) -> Result<ActionDistribution> {
        let input = self.mlp_input(flat, pad_to)?;
        let mut tape = Tape::new();
        let vars = self.actor.register(&mut tape);
        let (mean, log_std) = actor_batch(&mut tape, &vars, &input);
        Ok(ActionDistribution {
            mean: tape.value(mean).row(0).to_vec(),
            log_std: tape.value(log_std).row(0).to_vec(),
        })
    }

    pub fn mlp_critic_forward(&self, flat: &Array1<f64>, pad_to: usize) -> Result<f64> {
        let input = self.mlp_input(flat, pad_to)?;
        let mut tape = Tape::new();
        let vars = self.critic.register(&mut tape);
        let v = critic_batch(&mut tape, &vars, &input);
        Ok(tape.value(v)[[0, 0]])
    }

    fn mlp_input(&self, flat: &Array1<f64>, pad_to: usize) -> Result<BatchInput> {
        let Encoder::Flat(space) = &self.actor.encoder else {
            return Err(Error::KindMismatch("expected an MLP-baseline policy".into()));
        };
        if flat.len() > pad_to {
            return Err(Error::ObservationTooWide {
                width: flat.len(),
                pad: pad_to,
            });
        }
        if pad_to != space.flat_width() {
            return Err(Error::ObservationTooWide {
                width: pad_to,
                pad: space.flat_width(),
            });
        }
        let mut x = Array2::zeros((1, pad_to));
        x.row_mut(0).slice_mut(ndarray::s![..flat.len()]).assign(flat);
        Ok(BatchInput::Flat(x))
    }

    fn require_gat(&self) -> Result<()> {
        match self.kind() {
            ControllerKind::Gat => Ok(()),
            ControllerKind::Mlp => Err(Error::KindMismatch("expected a GAT policy".into())),
        }
    }
}

/// Places per-vertex features in the slot of each vertex's lattice
/// coordinate; unoccupied slots stay zero.
pub fn flatten_observation(
    topology: &Topology,
    obs: &Observation,
    space: &DesignSpace,
) -> Result<Array1<f64>> {
    let width = space.flat_width();
    let mut x = Array1::zeros(width);
    for (k, v) in obs.global.iter().enumerate() {
        x[k] = *v;
    }
    let outside = topology
        .node_keys
        .iter()
        .any(|k| k.x < 0 || k.y < 0 || k.x as usize > space.width || k.y as usize > space.height);
    if outside {
        let max_x = topology.node_keys.iter().map(|k| k.x.max(0) as usize).max().unwrap_or(0);
        let max_y = topology.node_keys.iter().map(|k| k.y.max(0) as usize).max().unwrap_or(0);
        let slots = (max_x.max(space.width) + 1) * (max_y.max(space.height) + 1);
        return Err(Error::ObservationTooWide {
            width: Observation::GLOBAL + Observation::PER_NODE * slots,
            pad: width,
        });
    }
    for (key, node) in topology.node_keys.iter().zip(&obs.nodes) {
        let (kx, ky) = (key.x as usize, key.y as usize);
        let slot = ky * (space.width + 1) + kx;
        let base = Observation::GLOBAL + Observation::PER_NODE * slot;
        for (k, v) in node.iter().enumerate() {
            x[base + k] = *v;
        }
    }
    Ok(x)
}

/// A batch of `graphs` copies of one topology, edges grouped by destination.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub x: Array2<f64>,
    pub edges: EdgeList,
    pub node_graph: Vec<usize>,
    pub graphs: usize,
    pub nodes_per_graph: usize,
}

impl GraphBatch {
    pub fn new(topology: &Topology, features: &[Array2<f64>]) -> Self {
        let n = topology.node_count();
        let mut order: Vec<usize> = (0..topology.edge_count()).collect();
        order.sort_by_key(|&e| topology.edges[e].1);
        let b = features.len();
        let e = order.len();
        let mut x = Array2::zeros((b * n, NODE_FEATURES));
        let mut edge_features = Array2::zeros((b * e, 2));
        let mut src = Vec::with_capacity(b * e);
        let mut dst = Vec::with_capacity(b * e);
        let mut segments: Vec<Segment> = Vec::new();
        for (g, f) in features.iter().enumerate() {
            assert_eq!(f.dim(), (n, NODE_FEATURES), "feature matrix shape");
            x.slice_mut(ndarray::s![g * n..(g + 1) * n, ..]).assign(f);
            let base = g * e;
            for (k, &edge) in order.iter().enumerate() {
                let (s, d) = topology.edges[edge];
                src.push(g * n + s);
                dst.push(g * n + d);
                let ef = topology.edge_features[edge];
                edge_features[[base + k, 0]] = ef[0];
                edge_features[[base + k, 1]] = ef[1];
                match segments.last_mut() {
                    Some(Segment { start, len }) if dst[*start] == g * n + d => *len += 1,
                    _ => segments.push(Segment {
                        start: base + k,
                        len: 1,
                    }),
                }
            }
        }
        let node_graph = (0..b * n).map(|i| i / n.max(1)).collect();
        Self {
            x,
            edges: EdgeList {
                src,
                dst,
                features: edge_features,
                segments,
            },
            node_graph,
            graphs: b,
            nodes_per_graph: n,
        }
    }
}

#[derive(Debug, Clone)]
pub enum BatchInput {
    Graph(GraphBatch),
    Flat(Array2<f64>),
}

impl BatchInput {
    pub fn len(&self) -> usize {
        match self {
            BatchInput::Graph(g) => g.graphs,
            BatchInput::Flat(x) => x.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One attention round; returns node embeddings `(graphs·nodes) × GAT_WIDTH`.
pub fn gat_layer(tape: &mut Tape, [w_self, w_edge, attention]: [Var; 3], batch: &GraphBatch) -> Var {
    let x = tape.constant(batch.x.clone());
    let projected = tape.matmul(x, w_self);
    let summed = tape.attention_aggregate(projected, w_edge, attention, &batch.edges, LEAKY_SLOPE);
    tape.tanh(summed)
}

/// Mean of node embeddings per graph: `graphs × width`.
pub fn pool_batch(tape: &mut Tape, embeddings: Var, batch: &GraphBatch) -> Var {
    let summed = tape.scatter_add_rows(embeddings, &batch.node_graph, batch.graphs);
    tape.scale(summed, 1.0 / batch.nodes_per_graph as f64)
}

fn encode(tape: &mut Tape, vars: &NetVars, input: &BatchInput) -> Var {
    let pooled = match input {
        BatchInput::Graph(batch) => {
            let emb = gat_layer(tape, vars.gat(), batch);
            pool_batch(tape, emb, batch)
        }
        BatchInput::Flat(x) => tape.constant(x.clone()),
    };
    let [w1, b1, w2, b2] = vars.hidden();
    let h = tape.matmul(pooled, w1);
    let h = tape.add_row(h, b1);
    let h = tape.tanh(h);
    let h = tape.matmul(h, w2);
    let h = tape.add_row(h, b2);
    tape.tanh(h)
}

/// Returns `(mean: B × A, log_std: 1 × A)`.
pub fn actor_batch(tape: &mut Tape, vars: &NetVars, input: &BatchInput) -> (Var, Var) {
    let h = encode(tape, vars, input);
    let head = vars.head();
    let (weights, bias, log_std) = (head[0], head[1], head[2]);
    let out = tape.matmul_t(h, weights);
    let out = tape.add_row(out, bias);
    let mean = tape.tanh(out);
    let log_std = tape.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
    (mean, log_std)
}

/// Returns values `B × 1`.
pub fn critic_batch(tape: &mut Tape, vars: &NetVars, input: &BatchInput) -> Var {
    let h = encode(tape, vars, input);
    let head = vars.head();
    let out = tape.matmul_t(h, head[0]);
    tape.add_row(out, head[1])
}

/// Node embeddings for a single graph.
pub fn gat_forward(layer: &GatLayer, g: &RobotGraph) -> Array2<f64> {
    let mut tape = Tape::new();
    let vars = [
        tape.leaf(layer.w_self.clone()),
        tape.leaf(layer.w_edge.clone()),
        tape.leaf(layer.attention.clone()),
    ];
    let batch = GraphBatch::new(&g.topology, &[g.node_features.clone()]);
    let out = gat_layer(&mut tape, vars, &batch);
    tape.value(out).clone()
}

/// Arithmetic mean over node rows.
pub fn pool(embeddings: &Array2<f64>) -> Array1<f64> {
    assert!(embeddings.nrows() > 0, "pool needs at least one node");
    embeddings.mean_axis(ndarray::Axis(0)).expect("non-empty")
}

/// Diagonal Gaussian over actuator commands.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl ActionDistribution {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Draws an action and its log-probability. The returned action is not
    /// clamped; the simulator clamps to `[-1, 1]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let action: Vec<f64> = self
            .mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| {
                let z: f64 = rng.sample(StandardNormal);
                m + ls.clamp(LOG_STD_MIN, LOG_STD_MAX).exp() * z
            })
            .collect();
        let lp = self.log_prob(&action);
        (action, lp)
    }

    pub fn log_prob(&self, action: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(action)
            .map(|((m, ls), a)| {
                let ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let z = (a - m) / ls.exp();
                -0.5 * z * z - ls - 0.5 * LN_2PI
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|ls| 0.5 * (LN_2PI + 1.0) + ls.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .sum()
    }
}

/// Per-row Gaussian log-probability on the tape: `B × 1`.
pub fn log_prob_batch(tape: &mut Tape, mean: Var, log_std: Var, actions: Var) -> Var {
    let diff = tape.sub(actions, mean);
    let neg2 = tape.scale(log_std, -2.0);
    let inv_var = tape.exp(neg2);
    let sq = tape.square(diff);
    let scaled = tape.mul_row(sq, inv_var);
    let quad = tape.scale(scaled, -0.5);
    let per_row = tape.sum_cols(quad);
    let ls_sum = tape.sum(log_std);
    let a = tape.shape(mean).1 as f64;
    let b = tape.shape(mean).0;
    // Broadcast the scalar log-normalizer to every row.
    let ones = tape.constant(Array2::ones((b, 1)));
    let norm = tape.matmul(ones, ls_sum);
    let lp = tape.sub(per_row, norm);
    tape.add_scalar(lp, -0.5 * LN_2PI * a)
}

/// Entropy of the diagonal Gaussian: `1 × 1`.
pub fn entropy_tape(tape: &mut Tape, log_std: Var) -> Var {
    let a = tape.shape(log_std).1 as f64;
    let s = tape.sum(log_std);
    tape.add_scalar(s, 0.5 * (LN_2PI + 1.0) * a)
}

/// Random matrix with orthonormal rows or columns (whichever is fewer),
/// scaled by `gain`.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    let (n, k) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // k orthonormal vectors of length n via Gram-Schmidt on Gaussian draws.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut m = Array2::zeros((rows, cols));
    for (j, b) in basis.iter().enumerate() {
        for (i, v) in b.iter().enumerate() {
            if rows >= cols {
                m[[i, j]] = gain * v;
            } else {
                m[[j, i]] = gain * v;
            }
        }
    }
    m
}

/// Fresh actor output row for a new actuator.
pub fn fresh_output_row<R: Rng + ?Sized>(rng: &mut R) -> Array1<f64> {
    orthogonal(1, HIDDEN, OUTPUT_ROW_GAIN, rng).row(0).to_owned()
}

fn init_hidden<R: Rng + ?Sized>(input: usize, rng: &mut R) -> Hidden {
    Hidden {
        w1: orthogonal(input, HIDDEN, HIDDEN_GAIN, rng),
        b1: Array2::zeros((1, HIDDEN)),
        w2: orthogonal(HIDDEN, HIDDEN, HIDDEN_GAIN, rng),
        b2: Array2::zeros((1, HIDDEN)),
    }
}

fn init_encoder<R: Rng + ?Sized>(kind: ControllerKind, space: DesignSpace, rng: &mut R) -> (Encoder, usize) {
    match kind {
        ControllerKind::Gat => (
            Encoder::Gat(GatLayer {
                w_self: orthogonal(NODE_FEATURES, GAT_WIDTH, 1.0, rng),
                w_edge: orthogonal(2, GAT_WIDTH, 1.0, rng),
                attention: orthogonal(2 * GAT_WIDTH, 1, 1.0, rng),
            }),
            GAT_WIDTH,
        ),
        ControllerKind::Mlp => (Encoder::Flat(space), space.flat_width()),
    }
}

/// Fresh parameters for a morphology with the given actuators.
pub fn init_params<R: Rng + ?Sized>(
    kind: ControllerKind,
    space: DesignSpace,
    actuator_keys: &[ActuatorKey],
    rng: &mut R,
) -> PolicyParams {
    let a = actuator_keys.len();
    let (encoder, width) = init_encoder(kind, space, rng);
    let hidden = init_hidden(width, rng);
    let actor = Network {
        encoder,
        hidden,
        head: ActorHead {
            keys: actuator_keys.to_vec(),
            weights: orthogonal(a, HIDDEN, OUTPUT_ROW_GAIN, rng),
            bias: Array2::zeros((1, a)),
            log_std: Array2::from_elem((1, a), DEFAULT_LOG_STD),
        },
    };
    let (encoder, width) = init_encoder(kind, space, rng);
    let hidden = init_hidden(width, rng);
    let critic = Network {
        encoder,
        hidden,
        head: CriticHead {
            weight: orthogonal(1, HIDDEN, CRITIC_OUTPUT_GAIN, rng),
            bias: Array2::zeros((1, 1)),
        },
    };
    PolicyParams { actor, critic }
}

/// Drives a simulation with a parameter snapshot.
#[derive(Debug, Clone)]
pub struct PolicyController<'a> {
    pub params: &'a PolicyParams,
    pub topology: Topology,
    pub mode: FeatureMode,
    /// Act with the distribution mean instead of sampling.
    pub greedy: bool,
}

impl<'a> PolicyController<'a> {
    pub fn new(params: &'a PolicyParams, topology: Topology, mode: FeatureMode, greedy: bool) -> Result<Self> {
        params.check_keys(&topology.actuator_keys)?;
        Ok(Self {
            params,
            topology,
            mode,
            greedy,
        })
    }

    fn evaluate(&self, obs: &Observation) -> (ActionDistribution, f64) {
        let input = self
            .params
            .batch_input(&self.topology, &[obs], self.mode)
            .expect("topology checked at construction");
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let (mean, log_std) = actor_batch(&mut tape, &vars.actor, &input);
        let value = critic_batch(&mut tape, &vars.critic, &input);
        let dist = ActionDistribution {
            mean: tape.value(mean).row(0).to_vec(),
            log_std: tape.value(log_std).row(0).to_vec(),
        };
        (dist, tape.value(value)[[0, 0]])
    }
}

impl Controller for PolicyController<'_> {
    fn actuator_count(&self) -> usize {
        self.params.actuator_keys().len()
    }

    fn decide(&mut self, obs: &Observation, rng: &mut dyn rand::RngCore) -> Decision {
        let (dist, value) = self.evaluate(obs);
        let (action, log_prob) = if self.greedy {
            let lp = dist.log_prob(&dist.mean);
            (dist.mean.clone(), lp)
        } else {
            dist.sample(rng)
        };
        Decision {
            action,
            log_prob,
            value,
        }
    }

    fn value(&mut self, obs: &Observation) -> f64 {
        self.params
            .value(&self.topology, obs, self.mode)
            .expect("topology checked at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::morpho::MorphGenome;
    use crate::sim::{SimConfig, Simulation, Task};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sim_for(rows: &[&str]) -> Simulation {
        Simulation::new(&MorphGenome::from_rows(rows).unwrap(), Task::WalkerLite, SimConfig::default())
    }

    fn stirred(rows: &[&str], seed: u64) -> Simulation {
        let mut sim = sim_for(rows);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..15 {
            let a: Vec<f64> = (0..sim.actuator_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            sim.step(&a);
        }
        sim
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let m = orthogonal(4, 9, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let gram = m.dot(&m.t());
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lone_self_loop_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = GatLayer {
            w_self: orthogonal(NODE_FEATURES, GAT_WIDTH, 1.0, &mut rng),
            w_edge: orthogonal(2, GAT_WIDTH, 1.0, &mut rng),
            attention: orthogonal(2 * GAT_WIDTH, 1, 1.0, &mut rng),
        };
        let x = Array2::from_shape_fn((1, NODE_FEATURES), |(_, j)| (j as f64 * 0.37).sin());
        let g = RobotGraph {
            topology: Topology {
                node_keys: vec![crate::sim::VertexKey { x: 0, y: 0 }],
                edges: vec![(0, 0)],
                edge_features: vec![[0.0, 0.0]],
                actuator_keys: vec![],
            },
            node_features: x.clone(),
        };
        let h = gat_forward(&layer, &g);
        let expect = x.dot(&layer.w_self).mapv(|v| if v > 0.0 { v } else { 0.2 * v }).mapv(f64::tanh);
        assert_eq!(h, expect);
    }

    #[test]
    fn symmetric_pair_gets_identical_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = GatLayer {
            w_self: orthogonal(NODE_FEATURES, GAT_WIDTH, 1.0, &mut rng),
            w_edge: Array2::zeros((2, GAT_WIDTH)),
            attention: orthogonal(2 * GAT_WIDTH, 1, 1.0, &mut rng),
        };
        let row = Array2::from_shape_fn((1, NODE_FEATURES), |(_, j)| 0.1 * j as f64 - 0.4);
        let x = ndarray::concatenate(ndarray::Axis(0), &[row.view(), row.view()]).unwrap();
        let g = RobotGraph {
            topology: Topology {
                node_keys: vec![
                    crate::sim::VertexKey { x: 0, y: 0 },
                    crate::sim::VertexKey { x: 1, y: 0 },
                ],
                edges: vec![(0, 0), (1, 0), (1, 1), (0, 1)],
                edge_features: vec![[0.0, 0.0], [-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]],
                actuator_keys: vec![],
            },
            node_features: x,
        };
        let h = gat_forward(&layer, &g);
        assert_eq!(h.row(0), h.row(1));
    }

    #[test]
    fn pool_is_mean() {
        let e = ndarray::array![[0.0, 0.0, 0.0], [2.0, 2.0, 2.0]];
        assert_eq!(pool(&e).to_vec(), vec![1.0, 1.0, 1.0]);
        let same = Array2::from_shape_fn((5, 3), |(_, j)| j as f64 + 0.5);
        assert_eq!(pool(&same).to_vec(), vec![0.5, 1.5, 2.5]);
    }

    #[test]
    fn zero_output_rows_give_zero_mean() {
        let sim = stirred(&["314", "202"], 1);
        let mut params = init_params(
            ControllerKind::Gat,
            DesignSpace::default(),
            &sim.body().actuator_keys(),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        params.actor.head.weights.fill(0.0);
        params.actor.head.bias.fill(0.0);
        let g = build_graph(sim.body(), &sim.observe(), FeatureMode::LocalTransfer);
        let d = params.actor_forward(&g).unwrap();
        assert_eq!(d.mean, vec![0.0; 2]);
        assert_eq!(d.log_std, vec![DEFAULT_LOG_STD; 2]);
        params.critic.head.weight.fill(0.0);
        assert_eq!(params.critic_forward(&g).unwrap(), 0.0);
    }

    #[test]
    fn actor_rejects_foreign_keys() {
        let a = sim_for(&["33"]);
        let b = sim_for(&["34"]);
        let params = init_params(
            ControllerKind::Gat,
            DesignSpace::default(),
            &a.body().actuator_keys(),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        let g = build_graph(b.body(), &b.observe(), FeatureMode::LocalTransfer);
        assert!(matches!(params.actor_forward(&g), Err(Error::ActuatorMismatch { .. })));
    }

    #[test]
    fn actor_output_dimension_tracks_actuators() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let genome = MorphGenome::random(5, 5, &mut rng);
            let sim = Simulation::new(&genome, Task::WalkerLite, SimConfig::default());
            let keys = sim.body().actuator_keys();
            for kind in [ControllerKind::Gat, ControllerKind::Mlp] {
                let params = init_params(kind, DesignSpace::default(), &keys, &mut rng);
                let topo = Topology::from_body(sim.body());
                let d = params.distribution(&topo, &sim.observe(), FeatureMode::LocalTransfer).unwrap();
                assert_eq!(d.len(), keys.len());
            }
        }
    }

    #[test]
    fn shapes_independent_of_morphology() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shapes = |p: &PolicyParams| -> Vec<(usize, usize)> {
            let n = p.actor.tensors().len() - 3;
            p.actor.tensors()[..n].iter().map(|t| t.dim()).collect()
        };
        let mut seen = None;
        for _ in 0..10 {
            let genome = MorphGenome::random(5, 5, &mut rng);
            let keys: Vec<_> = crate::sim::build_body(&genome, &SimConfig::default()).actuator_keys();
            let p = init_params(ControllerKind::Gat, DesignSpace::default(), &keys, &mut rng);
            let s = shapes(&p);
            assert_eq!(seen.get_or_insert_with(|| s.clone()), &s);
        }
    }

    #[test]
    fn mlp_padding_and_zero_weights() {
        let sim = stirred(&["33", "41"], 2);
        let space = DesignSpace::default();
        let keys = sim.body().actuator_keys();
        let mut params = init_params(ControllerKind::Mlp, space, &keys, &mut ChaCha8Rng::seed_from_u64(1));
        let topo = Topology::from_body(sim.body());
        let flat = flatten_observation(&topo, &sim.observe(), &space).unwrap();
        assert_eq!(flat.len(), space.flat_width());

        // Trailing zeros beyond the content do not change the output.
        let used = flat.iter().rposition(|v| *v != 0.0).unwrap() + 1;
        let short = flat.slice(ndarray::s![..used]).to_owned();
        let a = params.mlp_actor_forward(&flat, space.flat_width()).unwrap();
        let b = params.mlp_actor_forward(&short, space.flat_width()).unwrap();
        assert_eq!(a, b);

        let too_wide = Array1::zeros(space.flat_width() + 1);
        assert!(matches!(
            params.mlp_actor_forward(&too_wide, space.flat_width()),
            Err(Error::ObservationTooWide { .. })
        ));

        for t in params.actor.tensors_mut() {
            t.fill(0.0);
        }
        let z = params.mlp_actor_forward(&flat, space.flat_width()).unwrap();
        assert_eq!(z.mean, vec![0.0; keys.len()]);
    }

    #[test]
    fn mlp_rejects_body_outside_design_space() {
        let sim = sim_for(&["333333"]);
        let topo = Topology::from_body(sim.body());
        let err = flatten_observation(&topo, &sim.observe(), &DesignSpace::default());
        assert!(matches!(err, Err(Error::ObservationTooWide { .. })));
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let keys = sim_for(&["34"]).body().actuator_keys();
        for kind in [ControllerKind::Gat, ControllerKind::Mlp] {
            let a = init_params(kind, DesignSpace::default(), &keys, &mut ChaCha8Rng::seed_from_u64(9));
            let b = init_params(kind, DesignSpace::default(), &keys, &mut ChaCha8Rng::seed_from_u64(9));
            let c = init_params(kind, DesignSpace::default(), &keys, &mut ChaCha8Rng::seed_from_u64(10));
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn gaussian_closed_forms() {
        let d = ActionDistribution {
            mean: vec![0.3, -0.2, 0.9],
            log_std: vec![0.0; 3],
        };
        let expect = -1.5 * LN_2PI;
        assert!((d.log_prob(&d.mean) - expect).abs() < 1e-12);

        let d2 = ActionDistribution {
            mean: vec![0.0, 0.0],
            log_std: vec![0.0, 0.0],
        };
        let e = d2.entropy();
        assert!((e - (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()).abs() < 1e-12);
        assert!((e - 2.8379).abs() < 1e-4);
    }

    #[test]
    fn tiny_std_samples_the_mean() {
        let d = ActionDistribution {
            mean: vec![0.25, -0.75],
            log_std: vec![LOG_STD_MIN; 2],
        };
        let (a, _) = d.sample(&mut ChaCha8Rng::seed_from_u64(0));
        for (x, m) in a.iter().zip(&d.mean) {
            assert!((x - m).abs() < 0.05);
        }
    }

    #[test]
    fn tape_log_prob_matches_closed_form() {
        let d = ActionDistribution {
            mean: vec![0.1, -0.4],
            log_std: vec![-0.3, 0.2],
        };
        let act = vec![0.5, 0.0];
        let mut tape = Tape::new();
        let m = tape.leaf(Array2::from_shape_vec((1, 2), d.mean.clone()).unwrap());
        let s = tape.leaf(Array2::from_shape_vec((1, 2), d.log_std.clone()).unwrap());
        let a = tape.constant(Array2::from_shape_vec((1, 2), act.clone()).unwrap());
        let lp = log_prob_batch(&mut tape, m, s, a);
        assert!((tape.value(lp)[[0, 0]] - d.log_prob(&act)).abs() < 1e-12);
        let e = entropy_tape(&mut tape, s);
        assert!((tape.scalar(e) - d.entropy()).abs() < 1e-12);
    }
}
