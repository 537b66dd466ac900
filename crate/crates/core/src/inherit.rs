//! Parameter transfer from a parent controller to a mutated child.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::policy::{fresh_output_row, init_params, ControllerKind, DesignSpace, PolicyParams, DEFAULT_LOG_STD};

/// Child-to-parent correspondence of nodes and actuators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correspondence {
    /// For each child node, the parent node at the same lattice coordinate.
    pub node_map: Vec<Option<usize>>,
    /// For each child actuator, the parent actuator with the same cell and type.
    pub actuator_map: Vec<Option<usize>>,
    /// Parent actuators with no child counterpart.
    pub removed: Vec<usize>,
}

impl Correspondence {
    pub fn matched(&self) -> usize {
        self.actuator_map.iter().flatten().count()
    }

    pub fn added(&self) -> usize {
        self.actuator_map.len() - self.matched()
    }

    pub fn is_identity(&self) -> bool {
        self.removed.is_empty()
            && self.node_map.iter().enumerate().all(|(i, m)| *m == Some(i))
            && self.actuator_map.iter().enumerate().all(|(i, m)| *m == Some(i))
    }
}

/// Matches nodes by exact lattice coordinate and actuators by cell and type.
pub fn match_graphs(parent: &Topology, child: &Topology) -> Correspondence {
    let parent_nodes: BTreeMap<_, _> = parent.node_keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let parent_acts: BTreeMap<_, _> = parent.actuator_keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let node_map = child.node_keys.iter().map(|k| parent_nodes.get(k).copied()).collect();
    let actuator_map: Vec<Option<usize>> = child.actuator_keys.iter().map(|k| parent_acts.get(k).copied()).collect();
    let kept: BTreeSet<usize> = actuator_map.iter().flatten().copied().collect();
    let removed = (0..parent.actuator_keys.len()).filter(|i| !kept.contains(i)).collect();
    Correspondence {
        node_map,
        actuator_map,
        removed,
    }
}

/// Child parameters built from the parent's.
///
/// Encoder, hidden layers and the whole critic are copied. Actor output rows
/// (with bias and log-std) are copied for matched actuators and freshly
/// initialized for new ones. Graph policies match actuators by key; the MLP
/// baseline only reuses a row when the actuator at the same index has the
/// same key.
pub fn map_weights<R: Rng + ?Sized>(
    parent: &PolicyParams,
    corr: &Correspondence,
    child: &Topology,
    rng: &mut R,
) -> Result<PolicyParams> {
    if corr.actuator_map.len() != child.actuator_keys.len() {
        return Err(Error::ActuatorMismatch {
            expected: corr.actuator_map.len(),
            actual: child.actuator_keys.len(),
        });
    }
    let sources: Vec<Option<usize>> = match parent.kind() {
        ControllerKind::Gat => corr.actuator_map.clone(),
        ControllerKind::Mlp => child
            .actuator_keys
            .iter()
            .enumerate()
            .map(|(k, key)| (parent.actuator_keys().get(k) == Some(key)).then_some(k))
            .collect(),
    };

    let head = &parent.actor.head;
    let a = child.actuator_keys.len();
    let mut weights = Array2::zeros((a, head.weights.ncols()));
    let mut bias = Array2::zeros((1, a));
    let mut log_std = Array2::from_elem((1, a), DEFAULT_LOG_STD);
    for (j, src) in sources.iter().enumerate() {
        match src {
            Some(i) => {
                weights.row_mut(j).assign(&head.weights.row(*i));
                bias[[0, j]] = head.bias[[0, *i]];
                log_std[[0, j]] = head.log_std[[0, *i]];
            }
            None => weights.row_mut(j).assign(&fresh_output_row(rng)),
        }
    }

    let mut out = parent.clone();
    out.actor.head.keys = child.actuator_keys.clone();
    out.actor.head.weights = weights;
    out.actor.head.bias = bias;
    out.actor.head.log_std = log_std;
    Ok(out)
}

/// Fresh parameters for the child, ignoring any parent.
pub fn scratch_init<R: Rng + ?Sized>(child: &Topology, kind: ControllerKind, space: DesignSpace, rng: &mut R) -> PolicyParams {
    init_params(kind, space, &child.actuator_keys, rng)
}

/// Fails unless both parameter sets are the same controller kind.
pub fn check_kind(parent: &PolicyParams, kind: ControllerKind) -> Result<()> {
    if parent.kind() != kind {
        return Err(Error::KindMismatch(format!("cannot map {:?} weights into a {:?} controller", parent.kind(), kind)));
    }
    Ok(())
}

/// One inheritance event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Lineage {
    pub parent: usize,
    pub child: usize,
    pub matched: usize,
    pub added: usize,
    pub removed: usize,
}

impl Lineage {
    pub fn new(parent: usize, child: usize, corr: &Correspondence) -> Self {
        Self {
            parent,
            child,
            matched: corr.matched(),
            added: corr.added(),
            removed: corr.removed.len(),
        }
    }
}
