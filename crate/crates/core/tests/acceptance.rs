//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any hard criterion fails.
//!
//! Run a subset with `cargo test --test acceptance -- 3 5`.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use codesign::autodiff::Tape;
use codesign::checkpoint::{Checkpoint, Meta};
use codesign::experiment::{replay, run_dir, run_experiment, ExperimentConfig, Method};
use codesign::graph::{build_graph, FeatureMode};
use codesign::inherit::{map_weights, match_graphs};
use codesign::morpho::{mutate, MorphGenome, MutationConfig, VoxelType};
use codesign::policy::{fresh_output_row, gat_forward, init_params, ControllerKind, DesignSpace, Encoder, PolicyController, PolicyParams, DEFAULT_LOG_STD};
use codesign::ppo::{collect, collect_grads, gae, ppo_loss, train_individual, Batch, PpoConfig, TrainSetup};
use codesign::sim::{build_body, rollout, NoOp, SimConfig, Simulation, Task};
use common::*;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact equality.
const EXACT: f64 = 0.0;
const PERMUTATION_TOL: f64 = 1e-12;
const GRADIENT_REL_TOL: f64 = 1e-4;
const GRADIENT_STEP: f64 = 1e-5;
const GAE_TOL: f64 = 1e-10;
const TELESCOPE_TOL: f64 = 1e-9;
const NO_OP_STEPS: usize = 1000;
/// Random 3×3 genomes simulated in addition to the exhaustive small shapes.
const SAMPLED_3X3: usize = 300;

enum Outcome {
    Pass(String),
    /// Soft criterion missed: reported, not a build failure.
    Finding(String),
}

type Check = fn() -> Result<Outcome, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1. Identity inheritance.
fn identity_inheritance() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut compared = 0;
    for i in 0..100 {
        let genome = MorphGenome::random(5, 5, &mut rng);
        let t = topology(&genome);
        let kind = if i % 2 == 0 { ControllerKind::Gat } else { ControllerKind::Mlp };
        let mode = if i % 4 < 2 { FeatureMode::LocalTransfer } else { FeatureMode::GlobalTransfer };
        let parent = init_params(kind, DesignSpace::default(), &t.actuator_keys, &mut rng);
        let child = map_weights(&parent, &match_graphs(&t, &t), &t, &mut rng).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let obs = random_observation(t.node_count(), &mut rng);
            let (pd, cd) = (parent.distribution(&t, &obs, mode).unwrap(), child.distribution(&t, &obs, mode).unwrap());
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            ensure(bits(&pd.mean) == bits(&cd.mean) && bits(&pd.log_std) == bits(&cd.log_std), || format!("morphology {i}: actor outputs differ"))?;
            let (pv, cv) = (parent.value(&t, &obs, mode).unwrap(), child.value(&t, &obs, mode).unwrap());
            ensure(pv.to_bits() == cv.to_bits(), || format!("morphology {i}: critic outputs differ"))?;
            compared += 1;
        }
    }
    Ok(Outcome::Pass(format!("{compared} observation pairs bit-equal (tolerance {EXACT})")))
}

// 2. Matched-head preservation.
fn matched_heads() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mutation = MutationConfig {
        per_cell_rate: 0.2,
        ..MutationConfig::default()
    };
    let (mut matched, mut added, mut removed) = (0, 0, 0);
    for pair in 0..200 {
        let parent_genome = MorphGenome::random(5, 5, &mut rng);
        let child_genome = mutate(&parent_genome, &mutation, &mut rng);
        let (pt, ct) = (topology(&parent_genome), topology(&child_genome));
        let kind = if pair % 2 == 0 { ControllerKind::Gat } else { ControllerKind::Mlp };
        let parent = init_params(kind, DesignSpace::default(), &pt.actuator_keys, &mut rng);
        let corr = match_graphs(&pt, &ct);
        let seed = rng.gen::<u64>();
        let child = map_weights(&parent, &corr, &ct, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;

        // Rows the controller kind reuses: by key for graphs, by unchanged
        // slot for the flat baseline.
        let sources: Vec<Option<usize>> = match kind {
            ControllerKind::Gat => corr.actuator_map.clone(),
            ControllerKind::Mlp => ct
                .actuator_keys
                .iter()
                .enumerate()
                .map(|(k, key)| (pt.actuator_keys.get(k) == Some(key)).then_some(k))
                .collect(),
        };
        let (ph, ch) = (&parent.actor.head, &child.actor.head);
        ensure(ch.keys == ct.actuator_keys && ch.weights.nrows() == ct.actuator_keys.len(), || format!("pair {pair}: head rows do not follow child actuators"))?;
        let mut fresh = ChaCha8Rng::seed_from_u64(seed);
        for (j, src) in sources.iter().enumerate() {
            match src {
                Some(i) => {
                    ensure(
                        ch.weights.row(j) == ph.weights.row(*i) && ch.bias[[0, j]].to_bits() == ph.bias[[0, *i]].to_bits() && ch.log_std[[0, j]].to_bits() == ph.log_std[[0, *i]].to_bits(),
                        || format!("pair {pair}: matched row {j} altered"),
                    )?;
                    matched += 1;
                }
                None => {
                    let expect = fresh_output_row(&mut fresh);
                    ensure(
                        ch.weights.row(j) == expect && ch.bias[[0, j]] == 0.0 && ch.log_std[[0, j]] == DEFAULT_LOG_STD,
                        || format!("pair {pair}: new row {j} is not a fresh initialization"),
                    )?;
                    ensure((0..ph.weights.nrows()).all(|i| ch.weights.row(j) != ph.weights.row(i)), || format!("pair {pair}: new row {j} copies a parent row"))?;
                    added += 1;
                }
            }
        }
        for &r in &corr.removed {
            ensure(!ch.keys.contains(&pt.actuator_keys[r]), || format!("pair {pair}: removed actuator still present"))?;
            removed += 1;
        }
        ensure(child.critic == parent.critic, || format!("pair {pair}: critic changed"))?;
        ensure(child.actor.encoder == parent.actor.encoder && child.actor.hidden == parent.actor.hidden, || format!("pair {pair}: shared layers changed"))?;
    }
    Ok(Outcome::Pass(format!("200 pairs: {matched} matched rows bit-equal, {added} fresh rows, {removed} removed rows absent")))
}

// 3. Permutation equivariance.
fn permutation_equivariance() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let genome = small_genome(&mut rng, 10);
        let body = build_body(&genome, &SimConfig::default());
        let obs = random_observation(body.points.len(), &mut rng);
        let mode = if i % 2 == 0 { FeatureMode::LocalTransfer } else { FeatureMode::GlobalTransfer };
        let g = build_graph(&body, &obs, mode);
        let params = init_params(ControllerKind::Gat, DesignSpace::default(), &g.topology.actuator_keys, &mut rng);
        let perm = permutation(g.topology.node_count(), &mut rng);
        let pg = permute_graph(&g, &perm, &mut rng);

        let Encoder::Gat(layer) = &params.actor.encoder else { unreachable!() };
        let emb = gat_forward(layer, &g);
        let expect = Array2::from_shape_fn(emb.dim(), |(r, c)| emb[[perm[r], c]]);
        worst = worst.max(max_abs_diff(&gat_forward(layer, &pg), &expect));

        let (a, b) = (params.actor_forward(&g).unwrap(), params.actor_forward(&pg).unwrap());
        for (x, y) in a.mean.iter().zip(&b.mean).chain(a.log_std.iter().zip(&b.log_std)) {
            worst = worst.max((x - y).abs());
        }
        worst = worst.max((params.critic_forward(&g).unwrap() - params.critic_forward(&pg).unwrap()).abs());
    }
    ensure(worst <= PERMUTATION_TOL, || format!("max deviation {worst:e} > {PERMUTATION_TOL:e}"))?;
    Ok(Outcome::Pass(format!("50 graphs, max deviation {worst:.2e} (tolerance {PERMUTATION_TOL:e})")))
}

// 4. Gradient correctness of the full PPO loss.
fn loss_value(params: &PolicyParams, batch: &Batch<'_>, cfg: &PpoConfig) -> f64 {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let l = ppo_loss(&mut tape, params, &vars, batch, cfg).unwrap();
    tape.scalar(l.total)
}

/// Copy of `params` with entry `e` of tensor `k` shifted by `delta`.
fn nudged(params: &PolicyParams, k: usize, e: usize, delta: f64) -> PolicyParams {
    let mut p = params.clone();
    p.tensors_mut()[k].as_slice_mut().unwrap()[e] += delta;
    p
}

/// Entries probed per tensor; small tensors are checked in full.
const PROBES_PER_TENSOR: usize = 48;

fn gradient_check() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let cfg = PpoConfig::default();
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    for instance in 0..20 {
        let genome = small_genome(&mut rng, 9);
        let t = topology(&genome);
        let mode = if instance % 2 == 0 { FeatureMode::LocalTransfer } else { FeatureMode::GlobalTransfer };
        let mut params = init_params(ControllerKind::Gat, DesignSpace::default(), &t.actuator_keys, &mut rng);
        for m in params.tensors_mut() {
            m.mapv_inplace(|x| x + rng.gen_range(-0.2..0.2));
        }
        let setup = TrainSetup {
            task: Task::WalkerLite,
            episode_length: 6,
            sim: SimConfig::default(),
            mode,
        };
        let mut ctl = PolicyController::new(&params, t.clone(), mode, false).unwrap();
        let (buffer, _) = collect(&genome, &mut ctl, &setup, 6, &mut rng);
        let mut batch = Batch::from_buffer(&buffer, &t, mode, &cfg);
        // Move ratios off the clip boundaries; some land outside the range.
        for lp in batch.old_log_probs.iter_mut() {
            let shift = loop {
                let s: f64 = rng.gen_range(-0.5..0.5);
                let r = (-s).exp();
                if (r - 0.8).abs() > 0.02 && (r - 1.2).abs() > 0.02 {
                    break s;
                }
            };
            *lp += shift;
        }
        batch.returns.mapv_inplace(|x| x + rng.gen_range(-1.0..1.0));

        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let loss = ppo_loss(&mut tape, &params, &vars, &batch, &cfg).map_err(|e| e.to_string())?;
        let grads = tape.backward(loss.total);
        let analytic = collect_grads(&params, &vars, &grads);

        for (k, grad) in analytic.iter().enumerate() {
            let n = grad.len();
            let entries: Vec<usize> = if n <= PROBES_PER_TENSOR { (0..n).collect() } else { (0..PROBES_PER_TENSOR).map(|_| rng.gen_range(0..n)).collect() };
            for e in entries {
                let plus = loss_value(&nudged(&params, k, e, GRADIENT_STEP), &batch, &cfg);
                let minus = loss_value(&nudged(&params, k, e, -GRADIENT_STEP), &batch, &cfg);
                let numeric = (plus - minus) / (2.0 * GRADIENT_STEP);
                let a = grad.as_slice().unwrap()[e];
                let err = rel_err(a, numeric);
                if err > worst {
                    worst = err;
                }
                ensure(err < GRADIENT_REL_TOL, || format!("instance {instance}, tensor {k}, entry {e}: analytic {a:e} vs numeric {numeric:e}"))?;
                probes += 1;
            }
        }
    }
    Ok(Outcome::Pass(format!("20 instances, {probes} probes, max relative error {worst:.2e} (tolerance {GRADIENT_REL_TOL:e})")))
}

// 5. GAE oracle.
fn gae_oracle() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.gen_range(1..=32);
        let r: Vec<f64> = (0..t).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..=t).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let d: Vec<bool> = (0..t).map(|_| rng.gen_bool(0.2)).collect();
        let (gamma, lambda) = (rng.gen_range(0.5..=1.0), rng.gen_range(0.0..=1.0));
        let (adv, _) = gae(&r, &v, &d, gamma, lambda);
        for (a, b) in adv.iter().zip(gae_brute_force(&r, &v, &d, gamma, lambda)) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= GAE_TOL, || format!("max deviation {worst:e}"))?;
    Ok(Outcome::Pass(format!("100 sequences, max deviation {worst:.2e} (tolerance {GAE_TOL:e})")))
}

// 6. Simulator sanity.
const MATERIALS: [VoxelType; 4] = [VoxelType::Empty, VoxelType::Rigid, VoxelType::Soft, VoxelType::HorizontalActuator];

/// Every valid genome of the given size with actuators written as type 3.
fn all_genomes(w: usize, h: usize) -> Vec<MorphGenome> {
    let n = w * h;
    (0..4usize.pow(n as u32))
        .filter_map(|mut code| {
            let cells = (0..n)
                .map(|_| {
                    let v = MATERIALS[code % 4];
                    code /= 4;
                    v
                })
                .collect();
            MorphGenome::try_new(w, h, cells).ok()
        })
        .collect()
}

fn settle_check(genome: &MorphGenome) -> Result<(), String> {
    let mut sim = Simulation::new(genome, Task::WalkerLite, SimConfig::default());
    let zeros = vec![0.0; sim.actuator_count()];
    let mut peak: f64 = sim.kinetic_energy();
    for _ in 0..NO_OP_STEPS {
        sim.step(&zeros);
        peak = peak.max(sim.kinetic_energy());
    }
    let last = sim.kinetic_energy();
    ensure(!sim.failed() && sim.robot_positions().iter().flatten().all(|x| x.is_finite()), || format!("non-finite state for\n{genome}"))?;
    ensure(last < peak, || format!("final KE {last:e} not below peak {peak:e} for\n{genome}"))
}

fn simulator_sanity() -> Result<Outcome, String> {
    // Under zero actions both actuator types are the same material, so one
    // of them stands for both; confirm that on a few bodies first.
    for rows in [["34", "12"], ["43", "21"], ["33", "44"]] {
        let g = MorphGenome::from_rows(&rows).unwrap();
        let swapped: Vec<String> = rows.iter().map(|r| r.chars().map(|c| match c { '3' => '4', '4' => '3', o => o }).collect()).collect();
        let s = MorphGenome::from_rows(&swapped.iter().map(String::as_str).collect::<Vec<_>>()).unwrap();
        let (mut a, mut b) = (Simulation::new(&g, Task::WalkerLite, SimConfig::default()), Simulation::new(&s, Task::WalkerLite, SimConfig::default()));
        for _ in 0..200 {
            a.step(&vec![0.0; a.actuator_count()]);
            b.step(&vec![0.0; b.actuator_count()]);
        }
        ensure(a.robot_positions() == b.robot_positions(), || "actuator types differ under zero actions".into())?;
    }

    let mut exhaustive = 0;
    for (w, h) in [(1, 1), (1, 2), (2, 1), (1, 3), (3, 1), (2, 2), (2, 3), (3, 2)] {
        for g in all_genomes(w, h) {
            settle_check(&g)?;
            exhaustive += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for _ in 0..SAMPLED_3X3 {
        settle_check(&MorphGenome::random(3, 3, &mut rng))?;
    }

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let g = MorphGenome::random(3, 3, &mut rng);
        let mut sim = Simulation::new(&g, Task::WalkerLite, SimConfig::default());
        let start = sim.robot_com()[0];
        let mut total = 0.0;
        for _ in 0..300 {
            let u: Vec<f64> = (0..sim.actuator_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            total += sim.step(&u);
        }
        worst = worst.max((total - (sim.robot_com()[0] - start)).abs());
    }
    ensure(worst < TELESCOPE_TOL, || format!("telescoping error {worst:e}"))?;
    Ok(Outcome::Pass(format!(
        "{exhaustive} exhaustive small genomes + {SAMPLED_3X3} sampled 3x3, {NO_OP_STEPS} no-op steps each: finite, final KE < peak; telescoping error {worst:.1e} (tolerance {TELESCOPE_TOL:e})"
    )))
}

// 7. Training signal.
fn training_signal() -> Result<Outcome, String> {
    let genome = MorphGenome::from_rows(&["33", "11"]).unwrap();
    let setup = TrainSetup {
        task: Task::WalkerLite,
        episode_length: 256,
        sim: SimConfig::default(),
        mode: FeatureMode::LocalTransfer,
    };
    let (settle, _) = rollout(&genome, &mut NoOp(2), Task::WalkerLite, setup.episode_length, &setup.sim, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| e.to_string())?;
    let epsilon = settle.abs();
    let cfg = PpoConfig::default();
    let keys = build_body(&genome, &setup.sim).actuator_keys();
    let mut best = Vec::new();
    let mut greedy = Vec::new();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(ControllerKind::Gat, DesignSpace::default(), &keys, &mut rng);
        let out = train_individual(&genome, params, &setup, &cfg, &mut rng).map_err(|e| e.to_string())?;
        best.push(out.fitness);
        greedy.push(out.eval_return);
    }
    let mean = best.iter().sum::<f64>() / 5.0;
    let greedy_mean = greedy.iter().sum::<f64>() / 5.0;
    ensure(mean > epsilon, || format!("mean best return {mean:.5} not above settle baseline {epsilon:.2e}"))?;
    Ok(Outcome::Pass(format!(
        "{} updates x 5 seeds: mean best return {mean:.4} > settle baseline {epsilon:.2e} (mean greedy return {greedy_mean:.4})",
        cfg.total_updates
    )))
}

// 8. Directional co-design result.
const DIRECTIONAL_CONFIG: &str = r#"
task = "walker-lite"
seeds = [1, 2, 3]
output = "PLACEHOLDER"

[evolution]
population = 8
generations = 6
episode_length = 128

[ppo]
steps_per_batch = 512
minibatch_size = 64
epochs = 2
total_updates = 10
"#;

fn read_curve(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

fn directional() -> Result<Outcome, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::from_toml(DIRECTIONAL_CONFIG).map_err(|e| e.to_string())?;
    cfg.output = tmp.path().to_path_buf();
    let summary = run_experiment(&cfg, None).map_err(|e| e.to_string())?;

    let mut finals: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    for run in &summary.runs {
        let curve = read_curve(&run_dir(&cfg.output, run.method, run.seed).join("generations.csv"));
        ensure(curve.len() == 6, || format!("{} seed {}: {} generations", run.method, run.seed, curve.len()))?;
        ensure(curve.windows(2).all(|w| w[1] >= w[0]), || format!("{} seed {}: best fitness decreased: {curve:?}", run.method, run.seed))?;
        finals.entry(run.method).or_default().push(*curve.last().unwrap());
    }
    let stats = |m: Method| {
        let xs = &finals[&m];
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        (mean, (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
    };
    let table: Vec<String> = Method::ALL
        .iter()
        .map(|&m| {
            let (mean, std) = stats(m);
            format!("{m} {mean:.4}±{std:.4}")
        })
        .collect();
    let (local, local_std) = stats(Method::GatLocalTransfer);
    let (scratch, scratch_std) = stats(Method::MlpScratch);
    let detail = format!("(b) curves non-decreasing for all 12 runs; final best fitness: {}", table.join(", "));
    if local >= scratch {
        Ok(Outcome::Pass(format!("(a) gat-local-transfer {local:.4} >= mlp-scratch {scratch:.4}; {detail}")))
    } else {
        let within = scratch - local <= local_std.max(scratch_std);
        Ok(Outcome::Finding(format!(
            "(a) gat-local-transfer {local:.4} < mlp-scratch {scratch:.4} ({} 1 std); {detail}",
            if within { "within" } else { "beyond" }
        )))
    }
}

// 9 and 10 share one small experiment.
const SMALL_CONFIG: &str = r#"
task = "walker-lite"
seeds = [4, 5]
output = "PLACEHOLDER"

[evolution]
population = 3
generations = 2
episode_length = 40

[ppo]
steps_per_batch = 80
minibatch_size = 40
epochs = 2
total_updates = 2
"#;

fn small_experiment(out: &Path, workers: usize) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::from_toml(SMALL_CONFIG).map_err(|e| e.to_string())?;
    cfg.output = out.to_path_buf();
    run_experiment(&cfg, Some(workers)).map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn files_with_ext(dir: &Path, ext: &str, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            files_with_ext(&p, ext, out);
        } else if p.extension().is_some_and(|e| e == ext) {
            out.push(p);
        }
    }
}

fn determinism() -> Result<Outcome, String> {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    small_experiment(a.path(), 1)?;
    small_experiment(b.path(), 3)?;
    let mut files = Vec::new();
    files_with_ext(a.path(), "csv", &mut files);
    files_with_ext(a.path(), "jsonl", &mut files);
    files.sort();
    for f in &files {
        let rel = f.strip_prefix(a.path()).unwrap();
        let other = b.path().join(rel);
        ensure(fs::read(f).unwrap() == fs::read(&other).map_err(|e| format!("{}: {e}", rel.display()))?, || format!("{} differs", rel.display()))?;
    }
    Ok(Outcome::Pass(format!("{} CSV/JSONL files byte-identical across two runs (1 vs 3 workers)", files.len())))
}

fn checkpoint_round_trip() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    for i in 0..20 {
        let genome = MorphGenome::random(5, 5, &mut rng);
        let keys = build_body(&genome, &SimConfig::default()).actuator_keys();
        let kind = if i % 2 == 0 { ControllerKind::Gat } else { ControllerKind::Mlp };
        let mut params = init_params(kind, DesignSpace::default(), &keys, &mut rng);
        for m in params.tensors_mut() {
            m.mapv_inplace(|x| x * rng.gen_range(0.5..2.0) + 1e-300);
        }
        let meta = Meta {
            mode: FeatureMode::LocalTransfer,
            task: Task::WalkerLite,
            episode_length: 10,
            sim: SimConfig::default(),
            eval_return: rng.gen(),
        };
        let text = Checkpoint::new(&params, &genome, meta).unwrap().to_json();
        let back = Checkpoint::from_json(&text).unwrap().params().unwrap();
        let same = params.tensors().iter().zip(back.tensors()).all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        ensure(same && back == params, || format!("instance {i}: parameters changed in round trip"))?;
    }

    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_experiment(tmp.path(), 2)?;
    let mut replayed = 0;
    for &method in &cfg.methods {
        for &seed in &cfg.seeds {
            let dir = run_dir(&cfg.output, method, seed);
            let ck = Checkpoint::load(&dir.join("best.json")).map_err(|e| e.to_string())?;
            let genome: MorphGenome = fs::read_to_string(dir.join("best.genome")).unwrap().parse().map_err(|e: codesign::Error| e.to_string())?;
            let r = replay(&ck, &genome, ck.task, 10).map_err(|e| e.to_string())?;
            ensure(r.total_return.to_bits() == r.recorded_return.to_bits(), || format!("{method} seed {seed}: replay {} vs recorded {}", r.total_return, r.recorded_return))?;
            replayed += 1;
        }
    }
    Ok(Outcome::Pass(format!("20 random parameter sets bit-exact; {replayed} saved checkpoints replay to their recorded return exactly")))
}

fn main() {
    let criteria: [(usize, &str, Check); 10] = [
        (1, "identity inheritance", identity_inheritance),
        (2, "matched-head preservation", matched_heads),
        (3, "permutation equivariance", permutation_equivariance),
        (4, "gradient correctness", gradient_check),
        (5, "GAE oracle", gae_oracle),
        (6, "simulator sanity", simulator_sanity),
        (7, "training signal", training_signal),
        (8, "directional co-design", directional),
        (9, "determinism", determinism),
        (10, "checkpoint round-trip", checkpoint_round_trip),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(Outcome::Pass(detail)) => println!("criterion {n:>2} {name}: PASS [{secs:.1}s] {detail}"),
            Ok(Outcome::Finding(detail)) => println!("criterion {n:>2} {name}: PASS with finding [{secs:.1}s] {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n:>2} {name}: FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
