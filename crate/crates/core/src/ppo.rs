//! PPO training of one individual's actor and critic.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{FeatureMode, Topology};
use crate::morpho::MorphGenome;
use crate::policy::{actor_batch, critic_batch, entropy_tape, log_prob_batch, PolicyController, PolicyParams, PolicyVars};
use crate::sim::{run_episode, Controller, Observation, SimConfig, Simulation, Task};

/// Fitness assigned to an individual whose simulation or update diverged.
pub const FAILED_FITNESS: f64 = -1.0e6;

/// Transitions from one or more episodes under a fixed parameter snapshot.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub observations: Vec<Observation>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub dones: Vec<bool>,
    /// Index one past the last step of each episode.
    pub episode_ends: Vec<usize>,
    /// Value of the state after the last step when it is not terminal.
    pub bootstrap: f64,
    /// Set when any episode ended in a non-finite simulator state.
    pub failed: bool,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, obs: Observation, action: Vec<f64>, reward: f64, value: f64, log_prob: f64, done: bool) {
        self.observations.push(obs);
        self.actions.push(action);
        self.rewards.push(reward);
        self.values.push(value);
        self.log_probs.push(log_prob);
        self.dones.push(done);
    }

    pub fn mark_episode_end(&mut self, failed: bool) {
        self.episode_ends.push(self.len());
        self.failed |= failed;
    }

    /// Values with the bootstrap appended: length `len() + 1`.
    pub fn values_with_bootstrap(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        let last_done = self.dones.last().copied().unwrap_or(true);
        v.push(if last_done { 0.0 } else { self.bootstrap });
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub steps_per_batch: usize,
    pub total_updates: usize,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            learning_rate: 3e-4,
            epochs: 4,
            minibatch_size: 64,
            value_coef: 0.5,
            entropy_coef: 0.01,
            steps_per_batch: 1024,
            total_updates: 30,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn check(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(format!("ppo.{m}")));
        if !(self.clip > 0.0) {
            return err("clip must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return err("gamma must lie in (0, 1]");
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return err("lambda must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0) {
            return err("learning_rate must be positive");
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            return err("epochs and minibatch_size must be positive");
        }
        Ok(())
    }
}

/// Generalized advantage estimates and returns.
///
/// `values` has one more entry than `rewards`: the bootstrap for the state
/// after the last step (ignored when that step is done).
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let t = rewards.len();
    assert_eq!(values.len(), t + 1, "values need a bootstrap entry");
    assert_eq!(dones.len(), t, "one done flag per step");
    let mut adv = vec![0.0; t];
    let mut next = 0.0;
    for i in (0..t).rev() {
        let live = if dones[i] { 0.0 } else { 1.0 };
        let delta = rewards[i] + gamma * values[i + 1] * live - values[i];
        next = delta + gamma * lambda * live * next;
        adv[i] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts to mean 0 and scales to std 1 (std floored at 1e-8).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// Adam with a constant step size.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn apply(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
            self.v = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut **p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                });
        }
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.mapv_inplace(|x| x * s));
    }
    norm
}

/// Training data for one PPO update, fixed before the first gradient step.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub topology: &'a Topology,
    pub mode: FeatureMode,
    pub observations: Vec<&'a Observation>,
    pub actions: Array2<f64>,
    pub old_log_probs: Array2<f64>,
    pub advantages: Array2<f64>,
    pub returns: Array2<f64>,
}

impl<'a> Batch<'a> {
    /// GAE over the buffer, advantages normalized.
    pub fn from_buffer(buffer: &'a RolloutBuffer, topology: &'a Topology, mode: FeatureMode, cfg: &PpoConfig) -> Self {
        let values = buffer.values_with_bootstrap();
        let (mut adv, returns) = gae(&buffer.rewards, &values, &buffer.dones, cfg.gamma, cfg.lambda);
        normalize_advantages(&mut adv);
        let n = buffer.len();
        let a = buffer.actions.first().map_or(0, Vec::len);
        let actions = Array2::from_shape_fn((n, a), |(i, j)| buffer.actions[i][j]);
        Self {
            topology,
            mode,
            observations: buffer.observations.iter().collect(),
            actions,
            old_log_probs: Array2::from_shape_vec((n, 1), buffer.log_probs.clone()).expect("n"),
            advantages: Array2::from_shape_vec((n, 1), adv).expect("n"),
            returns: Array2::from_shape_vec((n, 1), returns).expect("n"),
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Rows `idx` of this batch.
    pub fn select(&self, idx: &[usize]) -> Batch<'a> {
        let rows = |m: &Array2<f64>| m.select(ndarray::Axis(0), idx);
        Batch {
            topology: self.topology,
            mode: self.mode,
            observations: idx.iter().map(|&i| self.observations[i]).collect(),
            actions: rows(&self.actions),
            old_log_probs: rows(&self.old_log_probs),
            advantages: rows(&self.advantages),
            returns: rows(&self.returns),
        }
    }
}

/// Loss terms recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    pub ratio: Var,
}

/// Clipped-surrogate PPO loss for `batch`: `policy + c_v·value − c_e·entropy`.
pub fn ppo_loss(tape: &mut Tape, params: &PolicyParams, vars: &PolicyVars, batch: &Batch<'_>, cfg: &PpoConfig) -> Result<LossVars> {
    let input = params.batch_input(batch.topology, &batch.observations, batch.mode)?;
    let (mean, log_std) = actor_batch(tape, &vars.actor, &input);
    let values = critic_batch(tape, &vars.critic, &input);

    let actions = tape.constant(batch.actions.clone());
    let old = tape.constant(batch.old_log_probs.clone());
    let adv = tape.constant(batch.advantages.clone());
    let ret = tape.constant(batch.returns.clone());

    let logp = log_prob_batch(tape, mean, log_std, actions);
    let diff = tape.sub(logp, old);
    let ratio = tape.exp(diff);
    let unclipped = tape.mul(ratio, adv);
    let clipped_ratio = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let clipped = tape.mul(clipped_ratio, adv);
    let surrogate = tape.minimum(unclipped, clipped);
    let surrogate_mean = tape.mean(surrogate);
    let policy = tape.neg(surrogate_mean);

    let err = tape.sub(values, ret);
    let sq = tape.square(err);
    let value = tape.mean(sq);

    let entropy = entropy_tape(tape, log_std);

    let weighted_value = tape.scale(value, cfg.value_coef);
    let weighted_entropy = tape.scale(entropy, -cfg.entropy_coef);
    let total = tape.add(policy, weighted_value);
    let total = tape.add(total, weighted_entropy);
    Ok(LossVars {
        total,
        policy,
        value,
        entropy,
        ratio,
    })
}

/// Gradients of every tensor in [`PolicyParams::tensors`] order.
pub fn collect_grads(params: &PolicyParams, vars: &PolicyVars, grads: &Gradients) -> Vec<Array2<f64>> {
    let handles = vars.actor.vars.iter().chain(&vars.critic.vars);
    params
        .tensors()
        .into_iter()
        .zip(handles)
        .map(|(t, v)| grads.get_or_zeros(*v, t.dim()))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Epochs of shuffled minibatch steps on one batch.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut PolicyParams,
    optimizer: &mut Adam,
    batch: &Batch<'_>,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let n = batch.len();
    let mut stats = UpdateStats::default();
    if n == 0 {
        return Ok(stats);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut minibatches = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let mb = batch.select(chunk);
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let loss = ppo_loss(&mut tape, params, &vars, &mb, cfg)?;
            let total = tape.scalar(loss.total);
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss);
            }
            let grads = tape.backward(loss.total);
            let mut flat = collect_grads(params, &vars, &grads);
            clip_global_norm(&mut flat, cfg.max_grad_norm);
            if flat.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(Error::NonFiniteLoss);
            }
            optimizer.apply(&mut params.tensors_mut(), &flat);

            let clipped = tape
                .value(loss.ratio)
                .iter()
                .filter(|r| (*r - 1.0).abs() > cfg.clip)
                .count();
            stats.policy_loss += tape.scalar(loss.policy);
            stats.value_loss += tape.scalar(loss.value);
            stats.entropy += tape.scalar(loss.entropy);
            stats.clip_fraction += clipped as f64 / chunk.len() as f64;
            minibatches += 1;
        }
    }
    let k = minibatches.max(1) as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.clip_fraction /= k;
    Ok(stats)
}

/// One row of a per-individual training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpdateLog {
    pub update: usize,
    pub mean_return: f64,
    pub best_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

pub const TRAINING_LOG_HEADER: &str =
    "update,mean_return,best_return,policy_loss,value_loss,entropy,clip_fraction";

pub fn training_log_csv(rows: &[UpdateLog]) -> String {
    let mut out = String::from(TRAINING_LOG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.update, r.mean_return, r.best_return, r.policy_loss, r.value_loss, r.entropy, r.clip_fraction
        ));
    }
    out
}

/// Everything one environment needs besides the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSetup {
    pub task: Task,
    pub episode_length: usize,
    pub sim: SimConfig,
    pub mode: FeatureMode,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    /// Best episodic return seen during training, or [`FAILED_FITNESS`].
    pub fitness: f64,
    /// Return of one greedy episode with the final parameters.
    pub eval_return: f64,
    pub failed: bool,
    pub log: Vec<UpdateLog>,
}

/// Greedy (mean-action) episode return.
pub fn evaluate(genome: &MorphGenome, params: &PolicyParams, setup: &TrainSetup) -> Result<(f64, bool)> {
    let mut sim = Simulation::new(genome, setup.task, setup.sim);
    let topology = Topology::from_body(sim.body());
    let mut ctl = PolicyController::new(params, topology, setup.mode, true)?;
    let mut buffer = RolloutBuffer::default();
    // Greedy control draws nothing from the rng.
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let ret = run_episode(&mut sim, &mut ctl, setup.episode_length, &mut rng, &mut buffer, |_| {});
    Ok((ret, sim.failed()))
}

/// Collects `steps` transitions, restarting episodes as they end. The last
/// episode is cut short if it would overrun the batch. Returns the buffer and
/// the returns of episodes that ran to completion.
pub fn collect<R: Rng>(
    genome: &MorphGenome,
    controller: &mut PolicyController<'_>,
    setup: &TrainSetup,
    steps: usize,
    rng: &mut R,
) -> (RolloutBuffer, Vec<f64>) {
    let mut buffer = RolloutBuffer::default();
    let mut returns = Vec::new();
    while buffer.len() < steps && setup.episode_length > 0 {
        let budget = setup.episode_length.min(steps - buffer.len());
        let mut sim = Simulation::new(genome, setup.task, setup.sim);
        let before = buffer.len();
        let ret = run_episode(&mut sim, controller, budget, rng, &mut buffer, |_| {});
        let ran = buffer.len() - before;
        if sim.is_terminal() || ran == setup.episode_length {
            returns.push(ret);
        } else {
            // Truncated by the batch boundary: not an episode end.
            *buffer.dones.last_mut().expect("ran > 0") = false;
            buffer.bootstrap = controller.value(&sim.observe());
        }
        if sim.failed() {
            break;
        }
    }
    (buffer, returns)
}

/// Trains `params` on the genome's environment and reports the best episodic
/// return observed.
pub fn train_individual<R: Rng>(
    genome: &MorphGenome,
    params: PolicyParams,
    setup: &TrainSetup,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    let topology = Topology::from_body(&crate::sim::build_body(genome, &setup.sim));
    params.check_keys(&topology.actuator_keys)?;
    let mut params = params;
    let mut optimizer = Adam::new(cfg.learning_rate);
    let mut best = f64::NEG_INFINITY;
    let mut log = Vec::with_capacity(cfg.total_updates);
    let mut failed = false;

    for update in 0..cfg.total_updates {
        let (buffer, returns) = {
            let mut ctl = PolicyController::new(&params, topology.clone(), setup.mode, false)?;
            collect(genome, &mut ctl, setup, cfg.steps_per_batch, rng)
        };
        if buffer.failed {
            failed = true;
            break;
        }
        best = returns.iter().copied().fold(best, f64::max);
        let batch = Batch::from_buffer(&buffer, &topology, setup.mode, cfg);
        let stats = match ppo_update(&mut params, &mut optimizer, &batch, cfg, rng) {
            Ok(s) => s,
            Err(Error::NonFiniteLoss) => {
                failed = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let mean_return = if returns.is_empty() {
            buffer.rewards.iter().sum()
        } else {
            returns.iter().sum::<f64>() / returns.len() as f64
        };
        log.push(UpdateLog {
            update,
            mean_return,
            best_return: best,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
        });
        log::debug!("update {update}: mean {mean_return:.4} best {best:.4}");
    }

    let (eval_return, eval_failed) = evaluate(genome, &params, setup)?;
    failed |= eval_failed;
    if best == f64::NEG_INFINITY && !failed {
        best = eval_return;
    }
    Ok(TrainOutcome {
        params,
        fitness: if failed { FAILED_FITNESS } else { best },
        eval_return,
        failed,
        log,
    })
}
