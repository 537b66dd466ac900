//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use codesign::graph::{RobotGraph, Topology};
use codesign::morpho::MorphGenome;
use codesign::policy::{GatLayer, LEAKY_SLOPE};
use codesign::sim::{build_body, Observation, SimConfig};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;

/// Random valid genome in a grid of at most 3×3 whose body has at most
/// `max_nodes` vertices.
pub fn small_genome<R: Rng>(rng: &mut R, max_nodes: usize) -> MorphGenome {
    loop {
        let (w, h) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let g = MorphGenome::random(w, h, rng);
        if build_body(&g, &SimConfig::default()).points.len() <= max_nodes {
            return g;
        }
    }
}

pub fn topology(genome: &MorphGenome) -> Topology {
    Topology::from_body(&build_body(genome, &SimConfig::default()))
}

pub fn random_observation<R: Rng>(nodes: usize, rng: &mut R) -> Observation {
    let mut row = || -> [f64; 8] { std::array::from_fn(|_| rng.gen_range(-1.0..1.0)) };
    let nodes = (0..nodes).map(|_| row()).collect();
    Observation {
        global: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
        nodes,
    }
}

/// Random permutation `perm` with `perm[new] = old`.
pub fn permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// The same graph with nodes relabelled by `perm` and edges listed in a
/// shuffled order.
pub fn permute_graph<R: Rng>(g: &RobotGraph, perm: &[usize], rng: &mut R) -> RobotGraph {
    let n = perm.len();
    let mut inverse = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    let t = &g.topology;
    let mut order: Vec<usize> = (0..t.edge_count()).collect();
    order.shuffle(rng);
    let topology = Topology {
        node_keys: perm.iter().map(|&old| t.node_keys[old]).collect(),
        edges: order
            .iter()
            .map(|&e| (inverse[t.edges[e].0], inverse[t.edges[e].1]))
            .collect(),
        edge_features: order.iter().map(|&e| t.edge_features[e]).collect(),
        actuator_keys: t.actuator_keys.clone(),
    };
    let node_features = Array2::from_shape_fn((n, g.node_features.ncols()), |(i, j)| g.node_features[[perm[i], j]]);
    RobotGraph {
        topology,
        node_features,
    }
}

fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn row_times(x: &[f64], w: &Array2<f64>) -> Vec<f64> {
    (0..w.ncols())
        .map(|c| x.iter().enumerate().map(|(r, v)| v * w[[r, c]]).sum())
        .collect()
}

/// Straight-line GAT layer: loops over destinations and their incoming edges.
pub fn dense_gat(layer: &GatLayer, g: &RobotGraph) -> Array2<f64> {
    let n = g.node_features.nrows();
    let h = layer.w_self.ncols();
    let proj: Vec<Vec<f64>> = (0..n)
        .map(|i| row_times(g.node_features.row(i).as_slice().unwrap(), &layer.w_self))
        .collect();
    let a: Vec<f64> = layer.attention.column(0).to_vec();
    let mut out = Array2::zeros((n, h));
    for j in 0..n {
        let mut messages = Vec::new();
        let mut logits = Vec::new();
        for (e, &(src, dst)) in g.topology.edges.iter().enumerate() {
            if dst != j {
                continue;
            }
            let edge = row_times(&g.topology.edge_features[e], &layer.w_edge);
            let m: Vec<f64> = (0..h).map(|k| leaky(proj[src][k] + edge[k])).collect();
            let logit: f64 = (0..h).map(|k| a[k] * proj[j][k] + a[h + k] * m[k]).sum();
            messages.push(m);
            logits.push(logit);
        }
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = weights.iter().sum();
        for k in 0..h {
            let s: f64 = messages.iter().zip(&weights).map(|(m, w)| w / z * m[k]).sum();
            out[[j, k]] = s.tanh();
        }
    }
    out
}

/// Dense two-layer tanh MLP applied to a pooled vector.
pub fn dense_hidden(h: &codesign::policy::Hidden, x: &Array1<f64>) -> Array1<f64> {
    let l1 = (x.dot(&h.w1) + h.b1.row(0)).mapv(f64::tanh);
    (l1.dot(&h.w2) + h.b2.row(0)).mapv(f64::tanh)
}

/// Discounted sums of TD residuals written out term by term.
pub fn gae_brute_force(r: &[f64], v: &[f64], d: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    (0..r.len())
        .map(|i| {
            let mut total = 0.0;
            let mut weight = 1.0;
            for k in i..r.len() {
                let live = if d[k] { 0.0 } else { 1.0 };
                total += weight * (r[k] + gamma * v[k + 1] * live - v[k]);
                if d[k] {
                    break;
                }
                weight *= gamma * lambda;
            }
            total
        })
        .collect()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relative error with a floor so entries near zero are judged absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
