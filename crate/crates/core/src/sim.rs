//! Deterministic 2D mass-spring soft-body simulator.
//!
//! Each voxel contributes four point masses at its corners (shared with
//! neighbours) and six springs: four edges and two diagonals. Actuator voxels
//! rescale the rest length of their axis-aligned springs. Integration is
//! semi-implicit Euler with `substeps` sub-steps per control step; contact
//! with the ground at `y = 0` is resolved at the velocity level with Coulomb
//! friction.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morpho::{Cell, MorphGenome, VoxelType};
use crate::ppo::RolloutBuffer;

pub type Vec2 = [f64; 2];

/// Vertex coordinate in the genome's lattice frame, `y` pointing up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexKey {
    pub x: i32,
    pub y: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActuatorKey {
    pub cell: Cell,
    pub kind: VoxelType,
}

impl fmt::Display for ActuatorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}:{}", self.cell.col, self.cell.row, self.kind.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpringAxis {
    Horizontal,
    Vertical,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    pub position: Vec2,
    pub velocity: Vec2,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spring {
    pub endpoints: (usize, usize),
    pub rest_length: f64,
    pub stiffness: f64,
    pub damping: f64,
    /// Actuators driving this spring. Shared edges between two actuators of
    /// the same axis carry both; the effective factor is their mean.
    pub actuated_by: Vec<usize>,
    pub axis: SpringAxis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    WalkerLite,
    PusherLite,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::WalkerLite => "walker-lite",
            Task::PusherLite => "pusher-lite",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "walker-lite" | "walkerlite" | "walker" => Ok(Task::WalkerLite),
            "pusher-lite" | "pusherlite" | "pusher" => Ok(Task::PusherLite),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub voxel_size: f64,
    pub voxel_mass: f64,
    pub stiffness_rigid: f64,
    pub stiffness_soft: f64,
    pub stiffness_actuator: f64,
    pub damping: f64,
    pub friction: f64,
    pub gravity: f64,
    pub dt: f64,
    pub substeps: usize,
    pub actuation_gain: f64,
    pub rest_scale_min: f64,
    pub rest_scale_max: f64,
    pub contact_stiffness: f64,
    pub box_gap: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.1,
            voxel_mass: 0.25,
            stiffness_rigid: 4000.0,
            stiffness_soft: 800.0,
            stiffness_actuator: 1500.0,
            damping: 2.0,
            friction: 0.8,
            gravity: 9.8,
            dt: 0.01,
            substeps: 10,
            actuation_gain: 0.5,
            rest_scale_min: 0.6,
            rest_scale_max: 1.6,
            contact_stiffness: 2000.0,
            box_gap: 0.05,
        }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<()> {
        let positive = [
            ("voxel_size", self.voxel_size),
            ("voxel_mass", self.voxel_mass),
            ("stiffness_rigid", self.stiffness_rigid),
            ("stiffness_soft", self.stiffness_soft),
            ("stiffness_actuator", self.stiffness_actuator),
            ("dt", self.dt),
            ("rest_scale_min", self.rest_scale_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("sim.{name} must be positive, got {v}")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::Config("sim.substeps must be positive".into()));
        }
        if self.rest_scale_max < self.rest_scale_min {
            return Err(Error::Config("sim.rest_scale_max below rest_scale_min".into()));
        }
        Ok(())
    }

    fn stiffness(&self, v: VoxelType) -> f64 {
        match v {
            VoxelType::Rigid => self.stiffness_rigid,
            VoxelType::Soft => self.stiffness_soft,
            VoxelType::HorizontalActuator | VoxelType::VerticalActuator => self.stiffness_actuator,
            VoxelType::Empty => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Actuator {
    pub key: ActuatorKey,
    /// Axis-aligned springs of this voxel that the actuator drives.
    pub springs: Vec<usize>,
}

/// Static structure of a robot built from a genome.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotBody {
    pub points: Vec<PointMass>,
    pub keys: Vec<VertexKey>,
    pub springs: Vec<Spring>,
    pub actuators: Vec<Actuator>,
    /// Per vertex, fraction of incident voxels of type rigid/soft/horizontal/vertical.
    pub incident_types: Vec<[f64; 4]>,
}

impl RobotBody {
    pub fn actuator_keys(&self) -> Vec<ActuatorKey> {
        self.actuators.iter().map(|a| a.key).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.points.iter().map(|p| p.mass).sum()
    }
}

fn corner_keys(cell: Cell, height: usize) -> [VertexKey; 4] {
    let x = cell.col as i32;
    let y = (height - 1 - cell.row) as i32;
    // bottom-left, bottom-right, top-right, top-left
    [
        VertexKey { x, y },
        VertexKey { x: x + 1, y },
        VertexKey { x: x + 1, y: y + 1 },
        VertexKey { x, y: y + 1 },
    ]
}

/// Vertex ordering: top lattice row first, left to right.
fn vertex_order(k: &VertexKey) -> (i32, i32) {
    (-k.y, k.x)
}

/// Builds the body with its lowest vertex on the ground and leftmost vertex at `x = 0`.
pub fn build_body(genome: &MorphGenome, cfg: &SimConfig) -> RobotBody {
    let height = genome.height();
    let solid: Vec<(Cell, VoxelType)> = genome.solid_cells().collect();

    let mut keys: Vec<VertexKey> = solid
        .iter()
        .flat_map(|(c, _)| corner_keys(*c, height))
        .collect();
    keys.sort_by_key(vertex_order);
    keys.dedup();
    let index: BTreeMap<VertexKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();

    let min_x = keys.iter().map(|k| k.x).min().unwrap_or(0);
    let min_y = keys.iter().map(|k| k.y).min().unwrap_or(0);
    let mut points: Vec<PointMass> = keys
        .iter()
        .map(|k| PointMass {
            position: [
                f64::from(k.x - min_x) * cfg.voxel_size,
                f64::from(k.y - min_y) * cfg.voxel_size,
            ],
            velocity: [0.0, 0.0],
            mass: 0.0,
        })
        .collect();
    let mut counts = vec![[0usize; 4]; keys.len()];

    // Springs keyed by unordered endpoint pair; stiffness averaged over the
    // voxels sharing an edge.
    struct Draft {
        axis: SpringAxis,
        stiffness_sum: f64,
        voxels: usize,
        actuated_by: Vec<usize>,
    }
    let mut drafts: BTreeMap<(usize, usize), Draft> = BTreeMap::new();
    let mut actuators = Vec::new();

    for (cell, voxel) in &solid {
        let corners = corner_keys(*cell, height).map(|k| index[&k]);
        for &v in &corners {
            points[v].mass += cfg.voxel_mass / 4.0;
            counts[v][voxel.code() as usize - 1] += 1;
        }
        let [bl, br, tr, tl] = corners;
        let edges = [
            (bl, br, SpringAxis::Horizontal),
            (tl, tr, SpringAxis::Horizontal),
            (bl, tl, SpringAxis::Vertical),
            (br, tr, SpringAxis::Vertical),
            (bl, tr, SpringAxis::Diagonal),
            (br, tl, SpringAxis::Diagonal),
        ];
        let actuator_id = voxel.is_actuator().then(|| {
            actuators.push(Actuator {
                key: ActuatorKey {
                    cell: *cell,
                    kind: *voxel,
                },
                springs: Vec::new(),
            });
            actuators.len() - 1
        });
        for (a, b, axis) in edges {
            let pair = (a.min(b), a.max(b));
            let draft = drafts.entry(pair).or_insert(Draft {
                axis,
                stiffness_sum: 0.0,
                voxels: 0,
                actuated_by: Vec::new(),
            });
            draft.stiffness_sum += cfg.stiffness(*voxel);
            draft.voxels += 1;
            let drives = matches!(
                (voxel, axis),
                (VoxelType::HorizontalActuator, SpringAxis::Horizontal)
                    | (VoxelType::VerticalActuator, SpringAxis::Vertical)
            );
            if drives {
                draft.actuated_by.push(actuator_id.expect("actuator voxel"));
            }
        }
    }

    let springs: Vec<Spring> = drafts
        .into_iter()
        .map(|((a, b), d)| {
            let (pa, pb) = (points[a].position, points[b].position);
            Spring {
                endpoints: (a, b),
                rest_length: ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt(),
                stiffness: d.stiffness_sum / d.voxels as f64,
                damping: cfg.damping,
                actuated_by: d.actuated_by,
                axis: d.axis,
            }
        })
        .collect();
    for (s_idx, s) in springs.iter().enumerate() {
        for &a in &s.actuated_by {
            actuators[a].springs.push(s_idx);
        }
    }

    let incident_types = counts
        .iter()
        .map(|c| {
            let total: usize = c.iter().sum();
            c.map(|n| n as f64 / total.max(1) as f64)
        })
        .collect();

    RobotBody {
        points,
        keys,
        springs,
        actuators,
        incident_types,
    }
}

/// Per-step observation: four global features and eight per-vertex features.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// COM velocity x, COM velocity y, body rotation angle, task feature.
    pub global: [f64; 4],
    /// Position relative to COM (2), velocity (2), incident voxel-type histogram (4).
    pub nodes: Vec<[f64; 8]>,
}

impl Observation {
    pub const GLOBAL: usize = 4;
    pub const PER_NODE: usize = 8;
}

/// Mutable simulation state over a fixed body and task.
#[derive(Debug, Clone)]
pub struct Simulation {
    body: RobotBody,
    cfg: SimConfig,
    task: Task,
    /// Robot vertices occupy `0..robot_points`; a pusher box, if any, follows.
    robot_points: usize,
    robot_springs: usize,
    masses: Vec<f64>,
    pos: Vec<Vec2>,
    vel: Vec<Vec2>,
    springs: Vec<Spring>,
    rest_scale: Vec<f64>,
    rest_offsets: Vec<Vec2>,
    steps: usize,
    terminal: bool,
    failed: bool,
}

impl Simulation {
    pub fn new(genome: &MorphGenome, task: Task, cfg: SimConfig) -> Self {
        Self::from_body(build_body(genome, &cfg), task, cfg)
    }

    pub fn from_body(body: RobotBody, task: Task, cfg: SimConfig) -> Self {
        let mut masses: Vec<f64> = body.points.iter().map(|p| p.mass).collect();
        let mut pos: Vec<Vec2> = body.points.iter().map(|p| p.position).collect();
        let mut springs = body.springs.clone();
        let robot_points = pos.len();
        let robot_springs = springs.len();

        if task == Task::PusherLite {
            let right = pos.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            let s = cfg.voxel_size;
            let x0 = right + cfg.box_gap;
            let base = pos.len();
            for corner in [[x0, 0.0], [x0 + s, 0.0], [x0 + s, s], [x0, s]] {
                pos.push(corner);
                masses.push(cfg.voxel_mass / 4.0);
            }
            let edges = [
                (0, 1, SpringAxis::Horizontal),
                (3, 2, SpringAxis::Horizontal),
                (0, 3, SpringAxis::Vertical),
                (1, 2, SpringAxis::Vertical),
                (0, 2, SpringAxis::Diagonal),
                (1, 3, SpringAxis::Diagonal),
            ];
            for (a, b, axis) in edges {
                let (pa, pb) = (pos[base + a], pos[base + b]);
                springs.push(Spring {
                    endpoints: (base + a, base + b),
                    rest_length: ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt(),
                    stiffness: cfg.stiffness_rigid,
                    damping: cfg.damping,
                    actuated_by: Vec::new(),
                    axis,
                });
            }
        }

        let com = weighted_mean(&masses[..robot_points], &pos[..robot_points]);
        let rest_offsets = pos[..robot_points]
            .iter()
            .map(|p| [p[0] - com[0], p[1] - com[1]])
            .collect();
        let vel = vec![[0.0, 0.0]; pos.len()];
        let rest_scale = vec![1.0; springs.len()];
        Self {
            body,
            cfg,
            task,
            robot_points,
            robot_springs,
            masses,
            pos,
            vel,
            springs,
            rest_scale,
            rest_offsets,
            steps: 0,
            terminal: false,
            failed: false,
        }
    }

    pub fn body(&self) -> &RobotBody {
        &self.body
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn actuator_count(&self) -> usize {
        self.body.actuators.len()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    /// True when the episode ended because the state became non-finite.
    pub fn failed(&self) -> bool {
        self.failed
    }

    pub fn robot_positions(&self) -> &[Vec2] {
        &self.pos[..self.robot_points]
    }

    pub fn robot_velocities(&self) -> &[Vec2] {
        &self.vel[..self.robot_points]
    }

    pub fn box_positions(&self) -> &[Vec2] {
        &self.pos[self.robot_points..]
    }

    /// Current rest-length multiplier per robot spring.
    pub fn rest_scales(&self) -> &[f64] {
        &self.rest_scale[..self.robot_springs]
    }

    /// Translates every point mass (robot and box) by `offset`.
    pub fn translate(&mut self, offset: Vec2) {
        for p in &mut self.pos {
            p[0] += offset[0];
            p[1] += offset[1];
        }
    }

    pub fn set_velocities(&mut self, vel: &[Vec2]) {
        self.vel[..vel.len()].copy_from_slice(vel);
    }

    pub fn robot_com(&self) -> Vec2 {
        weighted_mean(&self.masses[..self.robot_points], self.robot_positions())
    }

    pub fn robot_com_velocity(&self) -> Vec2 {
        weighted_mean(&self.masses[..self.robot_points], self.robot_velocities())
    }

    pub fn box_com(&self) -> Option<Vec2> {
        (self.pos.len() > self.robot_points).then(|| {
            weighted_mean(&self.masses[self.robot_points..], self.box_positions())
        })
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.masses
            .iter()
            .zip(&self.vel)
            .map(|(m, v)| 0.5 * m * (v[0] * v[0] + v[1] * v[1]))
            .sum()
    }

    fn progress(&self) -> f64 {
        match self.task {
            Task::WalkerLite => self.robot_com()[0],
            Task::PusherLite => self.box_com().expect("pusher has a box")[0],
        }
    }

    /// Rotation of the vertex cloud relative to its rest shape (best-fit
    /// angle about the COM, mass weighted).
    pub fn orientation(&self) -> f64 {
        let com = self.robot_com();
        let (mut cross, mut dot) = (0.0, 0.0);
        for ((p, r0), m) in self
            .robot_positions()
            .iter()
            .zip(&self.rest_offsets)
            .zip(&self.masses)
        {
            let r = [p[0] - com[0], p[1] - com[1]];
            cross += m * (r0[0] * r[1] - r0[1] * r[0]);
            dot += m * (r0[0] * r[0] + r0[1] * r[1]);
        }
        cross.atan2(dot)
    }

    /// Advances one control step. Returns the task reward for the step.
    ///
    /// # Panics
    /// If `actions.len()` differs from the actuator count.
    pub fn step(&mut self, actions: &[f64]) -> f64 {
        assert_eq!(
            actions.len(),
            self.actuator_count(),
            "action length must equal actuator count"
        );
        if self.terminal {
            return 0.0;
        }
        self.apply_actions(actions);
        let before = self.progress();
        let h = self.cfg.dt / self.cfg.substeps as f64;
        for _ in 0..self.cfg.substeps {
            self.substep(h);
        }
        self.steps += 1;
        let finite = self
            .pos
            .iter()
            .chain(&self.vel)
            .all(|v| v[0].is_finite() && v[1].is_finite());
        if !finite {
            self.terminal = true;
            self.failed = true;
            return 0.0;
        }
        self.progress() - before
    }

    fn apply_actions(&mut self, actions: &[f64]) {
        let (lo, hi) = (self.cfg.rest_scale_min, self.cfg.rest_scale_max);
        for (spring, scale) in self.springs[..self.robot_springs]
            .iter()
            .zip(self.rest_scale.iter_mut())
        {
            if spring.actuated_by.is_empty() {
                continue;
            }
            let sum: f64 = spring
                .actuated_by
                .iter()
                .map(|&a| (1.0 + self.cfg.actuation_gain * actions[a].clamp(-1.0, 1.0)).clamp(lo, hi))
                .sum();
            *scale = sum / spring.actuated_by.len() as f64;
        }
    }

    fn substep(&mut self, h: f64) {
        let n = self.pos.len();
        let mut force = vec![[0.0, 0.0]; n];
        for (f, m) in force.iter_mut().zip(&self.masses) {
            f[1] -= m * self.cfg.gravity;
        }
        for (s, scale) in self.springs.iter().zip(&self.rest_scale) {
            let (a, b) = s.endpoints;
            let d = [self.pos[b][0] - self.pos[a][0], self.pos[b][1] - self.pos[a][1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if len < 1e-12 {
                continue;
            }
            let u = [d[0] / len, d[1] / len];
            let dv = [self.vel[b][0] - self.vel[a][0], self.vel[b][1] - self.vel[a][1]];
            let magnitude = s.stiffness * (len - s.rest_length * scale)
                + s.damping * (dv[0] * u[0] + dv[1] * u[1]);
            force[a][0] += magnitude * u[0];
            force[a][1] += magnitude * u[1];
            force[b][0] -= magnitude * u[0];
            force[b][1] -= magnitude * u[1];
        }
        if self.task == Task::PusherLite {
            self.box_contact(&mut force);
        }
        let mu = self.cfg.friction;
        for i in 0..n {
            let m = self.masses[i];
            let mut v = [
                self.vel[i][0] + force[i][0] / m * h,
                self.vel[i][1] + force[i][1] / m * h,
            ];
            if self.pos[i][1] <= 0.0 && v[1] < 0.0 {
                // Ground removes the downward velocity; friction may remove up
                // to mu times that much tangential velocity.
                let normal = -v[1];
                v[1] = 0.0;
                let limit = mu * normal;
                v[0] = if v[0].abs() <= limit {
                    0.0
                } else {
                    v[0] - limit * v[0].signum()
                };
            }
            let mut p = [self.pos[i][0] + v[0] * h, self.pos[i][1] + v[1] * h];
            if p[1] < 0.0 {
                p[1] = 0.0;
                v[1] = v[1].max(0.0);
            }
            self.pos[i] = p;
            self.vel[i] = v;
        }
    }

}

/// Vertical tolerance, in voxel sizes, for a vertex to count as level with the box.
const CONTACT_SLACK: f64 = 0.05;

impl Simulation {
    /// Penalty contact between robot vertices and the box's bounding square.
    fn box_contact(&self, force: &mut [Vec2]) {
        let boxed = &self.pos[self.robot_points..];
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in boxed {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        let k = self.cfg.contact_stiffness;
        let mut reaction = [0.0, 0.0];
        // Vertices level with the box's bottom or top face still hit its sides.
        let slack = CONTACT_SLACK * self.cfg.voxel_size;
        for (f, p) in force[..self.robot_points].iter_mut().zip(&self.pos) {
            if p[0] <= x0 || p[0] >= x1 || p[1] < y0 - slack || p[1] > y1 + slack {
                continue;
            }
            let mut depths = vec![(p[0] - x0, [-1.0, 0.0]), (x1 - p[0], [1.0, 0.0])];
            if p[1] > y0 && p[1] < y1 {
                depths.push((p[1] - y0, [0.0, -1.0]));
                depths.push((y1 - p[1], [0.0, 1.0]));
            }
            let (depth, dir) = depths
                .into_iter()
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .expect("side candidates");
            let push = [k * depth * dir[0], k * depth * dir[1]];
            f[0] += push[0];
            f[1] += push[1];
            reaction[0] -= push[0];
            reaction[1] -= push[1];
        }
        let share = 1.0 / boxed.len() as f64;
        for f in &mut force[self.robot_points..] {
            f[0] += reaction[0] * share;
            f[1] += reaction[1] * share;
        }
    }

    pub fn observe(&self) -> Observation {
        let com = self.robot_com();
        let com_v = self.robot_com_velocity();
        let task_feature = match self.task {
            Task::WalkerLite => com[0],
            Task::PusherLite => self.box_com().expect("pusher has a box")[0] - com[0],
        };
        let nodes = self
            .robot_positions()
            .iter()
            .zip(self.robot_velocities())
            .zip(&self.body.incident_types)
            .map(|((p, v), hist)| {
                [
                    p[0] - com[0],
                    p[1] - com[1],
                    v[0],
                    v[1],
                    hist[0],
                    hist[1],
                    hist[2],
                    hist[3],
                ]
            })
            .collect();
        Observation {
            global: [com_v[0], com_v[1], self.orientation(), task_feature],
            nodes,
        }
    }
}

fn weighted_mean(masses: &[f64], values: &[Vec2]) -> Vec2 {
    let total: f64 = masses.iter().sum();
    let mut acc = [0.0, 0.0];
    for (m, v) in masses.iter().zip(values) {
        acc[0] += m * v[0];
        acc[1] += m * v[1];
    }
    [acc[0] / total, acc[1] / total]
}

/// What a controller returns for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Raw (unclamped) action, as used for the log-probability.
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

/// Anything that maps observations to actuator commands.
pub trait Controller {
    fn actuator_count(&self) -> usize;
    fn decide(&mut self, obs: &Observation, rng: &mut dyn rand::RngCore) -> Decision;
    /// Value estimate used to bootstrap a truncated rollout.
    fn value(&mut self, obs: &Observation) -> f64;
}

/// Outputs zero on every actuator.
#[derive(Debug, Clone, Copy)]
pub struct NoOp(pub usize);

impl Controller for NoOp {
    fn actuator_count(&self) -> usize {
        self.0
    }

    fn decide(&mut self, _obs: &Observation, _rng: &mut dyn rand::RngCore) -> Decision {
        Decision {
            action: vec![0.0; self.0],
            log_prob: 0.0,
            value: 0.0,
        }
    }

    fn value(&mut self, _obs: &Observation) -> f64 {
        0.0
    }
}

/// One row of a trajectory dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub reward: f64,
    pub com_x: f64,
    pub com_y: f64,
}

pub const TRAJECTORY_HEADER: &str = "step,reward,com_x,com_y";

pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.reward, r.com_x, r.com_y));
    }
    out
}

/// Runs one episode of at most `episode_length` steps, recording every step
/// into a buffer.
pub fn rollout<C, R>(
    genome: &MorphGenome,
    controller: &mut C,
    task: Task,
    episode_length: usize,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<(f64, RolloutBuffer)>
where
    C: Controller + ?Sized,
    R: Rng,
{
    let mut sim = Simulation::new(genome, task, *cfg);
    if controller.actuator_count() != sim.actuator_count() {
        return Err(Error::ActuatorMismatch {
            expected: controller.actuator_count(),
            actual: sim.actuator_count(),
        });
    }
    let mut buffer = RolloutBuffer::default();
    let total = run_episode(&mut sim, controller, episode_length, rng, &mut buffer, |_| {});
    Ok((total, buffer))
}

/// Steps `sim` under `controller` until `episode_length` steps or a terminal
/// state, appending transitions to `buffer`. `on_step` sees the simulation
/// after each step. Returns the summed reward.
pub fn run_episode<C, R, F>(
    sim: &mut Simulation,
    controller: &mut C,
    episode_length: usize,
    rng: &mut R,
    buffer: &mut RolloutBuffer,
    mut on_step: F,
) -> f64
where
    C: Controller + ?Sized,
    R: Rng,
    F: FnMut(&Simulation),
{
    let mut total = 0.0;
    for t in 0..episode_length {
        let obs = sim.observe();
        let decision = controller.decide(&obs, rng);
        let clamped: Vec<f64> = decision.action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let reward = sim.step(&clamped);
        total += reward;
        let done = sim.is_terminal() || t + 1 == episode_length;
        buffer.push(obs, decision.action, reward, decision.value, decision.log_prob, done);
        on_step(sim);
        if sim.is_terminal() {
            break;
        }
    }
    if !buffer.is_empty() {
        buffer.mark_episode_end(sim.failed());
    }
    total
}
