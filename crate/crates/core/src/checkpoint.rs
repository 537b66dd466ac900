//! JSON checkpoints of trained controllers.
//!
//! Every matrix is stored under a `(component, layer)` name with its shape and
//! row-major data; actuator rows are keyed by `col,row:code`. Floats are
//! written in shortest round-trip form, so loading gives back bit-identical
//! parameters.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::FeatureMode;
use crate::morpho::{Cell, MorphGenome, VoxelType};
use crate::policy::{ActorHead, ControllerKind, CriticHead, DesignSpace, Encoder, GatLayer, Hidden, Network, PolicyParams};
use crate::sim::{ActuatorKey, SimConfig, Task};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub component: String,
    pub layer: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Everything needed to rerun a trained controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: ControllerKind,
    pub mode: FeatureMode,
    pub design_space: DesignSpace,
    pub task: Task,
    pub episode_length: usize,
    pub sim: SimConfig,
    /// Greedy return recorded when the checkpoint was written.
    pub eval_return: f64,
    pub genome: MorphGenome,
    pub actuator_keys: Vec<String>,
    pub tensors: Vec<Tensor>,
}

fn layer_names(kind: ControllerKind, head: &[&'static str]) -> Vec<&'static str> {
    let mut names = match kind {
        ControllerKind::Gat => vec!["gat.w_self", "gat.w_edge", "gat.attention"],
        ControllerKind::Mlp => vec![],
    };
    names.extend(["hidden.w1", "hidden.b1", "hidden.w2", "hidden.b2"]);
    names.extend(head);
    names
}

const ACTOR_HEAD: [&str; 3] = ["out.weights", "out.bias", "out.log_std"];
const CRITIC_HEAD: [&str; 2] = ["out.weight", "out.bias"];

fn dump(component: &str, names: &[&str], tensors: Vec<&Array2<f64>>) -> Vec<Tensor> {
    names
        .iter()
        .zip(tensors)
        .map(|(name, t)| Tensor {
            component: component.into(),
            layer: (*name).into(),
            shape: [t.nrows(), t.ncols()],
            data: t.iter().copied().collect(),
        })
        .collect()
}

pub fn format_key(key: &ActuatorKey) -> String {
    key.to_string()
}

pub fn parse_key(text: &str) -> Result<ActuatorKey> {
    let bad = || Error::Checkpoint(format!("bad actuator key {text:?}"));
    let (cell, code) = text.split_once(':').ok_or_else(bad)?;
    let (col, row) = cell.split_once(',').ok_or_else(bad)?;
    let kind = code
        .parse::<u8>()
        .ok()
        .and_then(VoxelType::from_code)
        .filter(|k| k.is_actuator())
        .ok_or_else(bad)?;
    Ok(ActuatorKey {
        cell: Cell {
            col: col.parse().map_err(|_| bad())?,
            row: row.parse().map_err(|_| bad())?,
        },
        kind,
    })
}

/// Run context stored alongside the parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Meta {
    pub mode: FeatureMode,
    pub task: Task,
    pub episode_length: usize,
    pub sim: SimConfig,
    pub eval_return: f64,
}

impl Checkpoint {
    pub fn new(params: &PolicyParams, genome: &MorphGenome, meta: Meta) -> Result<Self> {
        let kind = params.kind();
        let design_space = match &params.actor.encoder {
            Encoder::Flat(space) => *space,
            Encoder::Gat(_) => DesignSpace::default(),
        };
        let mut tensors = dump("actor", &layer_names(kind, &ACTOR_HEAD), params.actor.tensors());
        tensors.extend(dump("critic", &layer_names(kind, &CRITIC_HEAD), params.critic.tensors()));
        if tensors.iter().any(|t| t.data.iter().any(|x| !x.is_finite())) {
            return Err(Error::Checkpoint("parameters are not finite".into()));
        }
        Ok(Self {
            version: FORMAT_VERSION,
            kind,
            mode: meta.mode,
            design_space,
            task: meta.task,
            episode_length: meta.episode_length,
            sim: meta.sim,
            eval_return: meta.eval_return,
            genome: genome.clone(),
            actuator_keys: params.actuator_keys().iter().map(format_key).collect(),
            tensors,
        })
    }

    pub fn meta(&self) -> Meta {
        Meta {
            mode: self.mode,
            task: self.task,
            episode_length: self.episode_length,
            sim: self.sim,
            eval_return: self.eval_return,
        }
    }

    pub fn params(&self) -> Result<PolicyParams> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let keys = self
            .actuator_keys
            .iter()
            .map(|k| parse_key(k))
            .collect::<Result<Vec<_>>>()?;
        let mut take = Reader {
            tensors: &self.tensors,
            next: 0,
        };
        let actor = Network {
            encoder: take.encoder("actor", self.kind, self.design_space)?,
            hidden: take.hidden("actor")?,
            head: ActorHead {
                keys,
                weights: take.tensor("actor", "out.weights")?,
                bias: take.tensor("actor", "out.bias")?,
                log_std: take.tensor("actor", "out.log_std")?,
            },
        };
        let critic = Network {
            encoder: take.encoder("critic", self.kind, self.design_space)?,
            hidden: take.hidden("critic")?,
            head: CriticHead {
                weight: take.tensor("critic", "out.weight")?,
                bias: take.tensor("critic", "out.bias")?,
            },
        };
        if take.next != self.tensors.len() {
            return Err(Error::Checkpoint("unexpected trailing tensors".into()));
        }
        let a = actor.head.keys.len();
        if actor.head.weights.nrows() != a || actor.head.bias.dim() != (1, a) || actor.head.log_std.dim() != (1, a) {
            return Err(Error::Checkpoint("actor head does not match its actuator keys".into()));
        }
        Ok(PolicyParams { actor, critic })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

struct Reader<'a> {
    tensors: &'a [Tensor],
    next: usize,
}

impl Reader<'_> {
    fn tensor(&mut self, component: &str, layer: &str) -> Result<Array2<f64>> {
        let t = self
            .tensors
            .get(self.next)
            .filter(|t| t.component == component && t.layer == layer)
            .ok_or_else(|| Error::Checkpoint(format!("expected tensor {component}/{layer}")))?;
        self.next += 1;
        Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone())
            .map_err(|_| Error::Checkpoint(format!("{component}/{layer}: data does not fill its shape")))
    }

    fn encoder(&mut self, component: &str, kind: ControllerKind, space: DesignSpace) -> Result<Encoder> {
        Ok(match kind {
            ControllerKind::Gat => Encoder::Gat(GatLayer {
                w_self: self.tensor(component, "gat.w_self")?,
                w_edge: self.tensor(component, "gat.w_edge")?,
                attention: self.tensor(component, "gat.attention")?,
            }),
            ControllerKind::Mlp => Encoder::Flat(space),
        })
    }

    fn hidden(&mut self, component: &str) -> Result<Hidden> {
        Ok(Hidden {
            w1: self.tensor(component, "hidden.w1")?,
            b1: self.tensor(component, "hidden.b1")?,
            w2: self.tensor(component, "hidden.w2")?,
            b2: self.tensor(component, "hidden.b2")?,
        })
    }
}
