//! Experiment runner: the method × seed matrix, aggregation and replay.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Meta};
use crate::error::{Error, Result};
use crate::evolve::{generations_csv, EvoConfig, Evolution, GenerationRecord, Inheritance};
use crate::graph::{FeatureMode, Topology};
use crate::morpho::{MorphGenome, MutationConfig};
use crate::policy::{ControllerKind, DesignSpace, PolicyController};
use crate::ppo::{training_log_csv, PpoConfig, RolloutBuffer};
use crate::render::{fitness_plot_svg, frame_svg, morphology_svg, Band};
use crate::sim::{run_episode, trajectory_csv, SimConfig, Simulation, Task, TrajectoryRow};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "CODESIGN_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    GatGlobalTransfer,
    GatLocalTransfer,
    MlpTransfer,
    MlpScratch,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::GatGlobalTransfer,
        Method::GatLocalTransfer,
        Method::MlpTransfer,
        Method::MlpScratch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::GatGlobalTransfer => "gat-global-transfer",
            Method::GatLocalTransfer => "gat-local-transfer",
            Method::MlpTransfer => "mlp-transfer",
            Method::MlpScratch => "mlp-scratch",
        }
    }

    pub fn kind(self) -> ControllerKind {
        match self {
            Method::GatGlobalTransfer | Method::GatLocalTransfer => ControllerKind::Gat,
            Method::MlpTransfer | Method::MlpScratch => ControllerKind::Mlp,
        }
    }

    /// Node-feature mode; the MLP baselines never build graph features.
    pub fn mode(self) -> FeatureMode {
        match self {
            Method::GatGlobalTransfer => FeatureMode::GlobalTransfer,
            _ => FeatureMode::LocalTransfer,
        }
    }

    pub fn inheritance(self) -> Inheritance {
        match self {
            Method::MlpScratch => Inheritance::Scratch,
            _ => Inheritance::Transfer,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Evolution settings shared by every method in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionSection {
    pub population: usize,
    pub generations: usize,
    pub elites: Option<usize>,
    pub episode_length: usize,
    pub design_space: DesignSpace,
    pub mutation: MutationConfig,
}

impl Default for EvolutionSection {
    fn default() -> Self {
        let evo = EvoConfig::default();
        Self {
            population: evo.population,
            generations: evo.generations,
            elites: evo.elites,
            episode_length: evo.episode_length,
            design_space: evo.design_space,
            mutation: evo.mutation,
        }
    }
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    pub task: Task,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    #[serde(default)]
    pub evolution: EvolutionSection,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside `[section]` (top level when `section` is empty),
/// falling back to the section header and then to line 1.
fn line_of_key(text: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            let lhs = line.split('=').next().unwrap_or("").trim();
            if line.contains('=') && lhs == key {
                return i + 1;
            }
        }
    }
    header.unwrap_or(1)
}

fn config_error(text: &str, section: &str, key: &str, msg: impl fmt::Display) -> Error {
    Error::Config(format!("line {}: {msg}", line_of_key(text, section, key)))
}

/// Re-anchors a validation error at the key its message names.
fn locate(text: &str, section: &str, err: Error) -> Error {
    let Error::Config(msg) = err else { return err };
    let stripped = msg.strip_prefix(&format!("{section}.")).unwrap_or(&msg);
    let key: String = stripped.chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '_').collect();
    config_error(text, section, &key, msg)
}

impl ExperimentConfig {
    /// Parses and validates a TOML config; errors name the offending line.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| line_of_offset(text, s.start));
            Error::Config(format!("line {line}: {}", e.message().trim()))
        })?;
        cfg.validate(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    fn validate(&self, text: &str) -> Result<()> {
        if self.methods.is_empty() {
            return Err(config_error(text, "", "methods", "methods must not be empty"));
        }
        if self.methods.iter().collect::<BTreeSet<_>>().len() != self.methods.len() {
            return Err(config_error(text, "", "methods", "methods must not repeat"));
        }
        if self.seeds.is_empty() {
            return Err(config_error(text, "", "seeds", "seeds must not be empty"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(config_error(text, "", "seeds", "seeds must not repeat"));
        }
        let evo = &self.evolution;
        for (key, value) in [
            ("population", evo.population),
            ("generations", evo.generations),
            ("episode_length", evo.episode_length),
        ] {
            if value == 0 {
                return Err(config_error(text, "evolution", key, format!("evolution.{key} must be positive")));
            }
        }
        if let Some(m) = evo.elites {
            if m == 0 || m > evo.population {
                return Err(config_error(
                    text,
                    "evolution",
                    "elites",
                    format!("evolution.elites must lie in 1..={}", evo.population),
                ));
            }
        }
        let space = evo.design_space;
        if space.width == 0 || space.height == 0 {
            return Err(config_error(text, "evolution.design_space", "width", "design space must be non-empty"));
        }
        evo.mutation
            .check()
            .map_err(|e| locate(text, "evolution.mutation", e))?;
        self.ppo.check().map_err(|e| locate(text, "ppo", e))?;
        self.sim.check().map_err(|e| locate(text, "sim", e))?;
        for method in &self.methods {
            self.evo_config(*method, self.seeds[0]).check()?;
        }
        Ok(())
    }

    pub fn evo_config(&self, method: Method, seed: u64) -> EvoConfig {
        let evo = &self.evolution;
        EvoConfig {
            population: evo.population,
            generations: evo.generations,
            elites: evo.elites,
            mode: method.mode(),
            kind: method.kind(),
            inheritance: method.inheritance(),
            task: self.task,
            seed,
            design_space: evo.design_space,
            mutation: evo.mutation,
            episode_length: evo.episode_length,
            sim: self.sim,
            ppo: self.ppo.clone(),
        }
    }
}

/// Worker count from the environment; `None` lets rayon decide.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
    }
}

/// Process exit code for an error: 2 for bad inputs, 1 for runtime failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::NonFiniteLoss => 1,
        _ => 2,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn run_dir(output: &Path, method: Method, seed: u64) -> PathBuf {
    output.join(method.name()).join(format!("seed-{seed}"))
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub history: Vec<GenerationRecord>,
    pub best_fitness: f64,
    pub best_genome: MorphGenome,
}

pub const INDIVIDUALS_HEADER: &str = "generation,id,parent,fitness,genome_hash";

fn individuals_csv(records: &[GenerationRecord]) -> String {
    let mut out = String::from(INDIVIDUALS_HEADER);
    out.push('\n');
    for r in records {
        for i in &r.individuals {
            let parent = i.parent.map(|p| p.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{}\n", r.generation, i.id, parent, i.fitness, i.genome_hash));
        }
    }
    out
}

/// One evolution run, writing its artifacts under `dir` as it goes.
pub fn run_single(cfg: EvoConfig, dir: &Path) -> Result<RunSummary> {
    let training_dir = dir.join("training");
    create_dir(&training_dir)?;
    let events_path = dir.join("events.jsonl");
    let file = File::create(&events_path).map_err(|e| Error::io(&events_path, e))?;
    let mut sink = BufWriter::new(file);
    let mut io_error = None;
    let mut events = |event: &crate::evolve::Event| {
        if io_error.is_none() {
            let line = serde_json::to_string(event).expect("events serialize");
            if let Err(e) = writeln!(sink, "{line}") {
                io_error = Some(e);
            }
        }
    };

    let mut evo = Evolution::init_population(cfg, &mut events)?;
    let mut history = Vec::new();
    let mut logged = BTreeSet::new();
    for _ in 0..evo.cfg.generations {
        evo.train_newborns(&mut events)?;
        for ind in &evo.population {
            if logged.insert(ind.id) {
                write(&training_dir.join(format!("ind-{}.csv", ind.id)), training_log_csv(&ind.training_log))?;
            }
        }
        history.push(evo.generation_step(&mut events)?);
        write(&dir.join("generations.csv"), generations_csv(&history))?;
        write(&dir.join("individuals.csv"), individuals_csv(&history))?;
    }
    drop(events);
    if let Some(e) = io_error {
        return Err(Error::io(&events_path, e));
    }
    sink.flush().map_err(|e| Error::io(&events_path, e))?;

    let best = evo.best().expect("at least one generation trained").clone();
    let meta = Meta {
        mode: evo.cfg.mode,
        task: evo.cfg.task,
        episode_length: evo.cfg.episode_length,
        sim: evo.cfg.sim,
        eval_return: best.eval_return.expect("trained"),
    };
    Checkpoint::new(&best.params, &best.genome, meta)?.save(&dir.join("best.json"))?;
    write(&dir.join("best.genome"), format!("{}\n", best.genome))?;
    write(&dir.join("best.svg"), morphology_svg(&best.genome))?;
    Ok(RunSummary {
        method: method_of(&evo.cfg),
        seed: evo.cfg.seed,
        history,
        best_fitness: best.fitness.expect("trained"),
        best_genome: best.genome,
    })
}

fn method_of(cfg: &EvoConfig) -> Method {
    match (cfg.kind, cfg.mode, cfg.inheritance) {
        (ControllerKind::Gat, FeatureMode::GlobalTransfer, _) => Method::GatGlobalTransfer,
        (ControllerKind::Gat, _, _) => Method::GatLocalTransfer,
        (ControllerKind::Mlp, _, Inheritance::Transfer) => Method::MlpTransfer,
        (ControllerKind::Mlp, _, Inheritance::Scratch) => Method::MlpScratch,
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub runs: Vec<RunSummary>,
    pub aggregate: Vec<AggregateRow>,
}

/// Runs every (method, seed) pair, then aggregates. A failed run does not
/// stop the others; the first failure is returned after all have finished.
pub fn run_experiment(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<ExperimentSummary> {
    create_dir(&cfg.output)?;
    let jobs: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .flat_map(|m| cfg.seeds.iter().map(move |s| (*m, *s)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<RunSummary>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(method, seed)| {
                let dir = run_dir(&cfg.output, method, seed);
                create_dir(&dir)?;
                let res = run_single(cfg.evo_config(method, seed), &dir);
                if let Err(e) = &res {
                    log::error!("{method} seed {seed} failed: {e}");
                }
                res
            })
            .collect()
    });
    let aggregate = aggregate(&cfg.output)?;
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ExperimentSummary { runs, aggregate })
}

pub const AGGREGATE_HEADER: &str = "method,generation,runs,mean_best_fitness,std_best_fitness";

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub generation: usize,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation of each generation across curves.
pub fn mean_std(curves: &[Vec<f64>]) -> Vec<(usize, f64, f64)> {
    let len = curves.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|g| {
            let xs: Vec<f64> = curves.iter().filter_map(|c| c.get(g).copied()).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            (xs.len(), mean, var.sqrt())
        })
        .collect()
}

fn read_best_curve(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize| Error::Config(format!("{}: line {line}: malformed row", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(crate::evolve::GENERATION_HEADER) {
        return Err(Error::Config(format!("{}: line 1: unexpected header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| bad(i + 2))
        })
        .collect()
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// Collects `<dir>/<method>/seed-*/generations.csv` into `aggregate.csv` and
/// `aggregate.svg` under `dir`.
pub fn aggregate(dir: &Path) -> Result<Vec<AggregateRow>> {
    let mut rows = Vec::new();
    let mut bands = Vec::new();
    for method_dir in sorted_subdirs(dir)? {
        let mut curves = Vec::new();
        for run in sorted_subdirs(&method_dir)? {
            let csv = run.join("generations.csv");
            let is_run = run
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("seed-"));
            if is_run && csv.is_file() {
                curves.push(read_best_curve(&csv)?);
            }
        }
        if curves.is_empty() {
            continue;
        }
        let label = method_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let stats = mean_std(&curves);
        for (generation, &(runs, mean, std)) in stats.iter().enumerate() {
            rows.push(AggregateRow {
                method: label.clone(),
                generation,
                runs,
                mean,
                std,
            });
        }
        bands.push(Band {
            label,
            mean: stats.iter().map(|s| s.1).collect(),
            std: stats.iter().map(|s| s.2).collect(),
        });
    }
    let mut csv = String::from(AGGREGATE_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{}\n", r.method, r.generation, r.runs, r.mean, r.std));
    }
    write(&dir.join("aggregate.csv"), csv)?;
    write(&dir.join("aggregate.svg"), fitness_plot_svg(&bands, "best fitness"))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub total_return: f64,
    /// Return stored in the checkpoint when it was written.
    pub recorded_return: f64,
    pub rows: Vec<TrajectoryRow>,
    pub frames: Vec<String>,
}

/// Greedy episode of a checkpoint on `genome`, with a frame every
/// `frame_every` steps starting at step 0.
pub fn replay(checkpoint: &Checkpoint, genome: &MorphGenome, task: Task, frame_every: usize) -> Result<Replay> {
    if frame_every == 0 {
        return Err(Error::Config("frame interval must be positive".into()));
    }
    let params = checkpoint.params()?;
    let mut sim = Simulation::new(genome, task, checkpoint.sim);
    let topology = Topology::from_body(sim.body());
    let mut controller = PolicyController::new(&params, topology, checkpoint.mode, true)?;
    let mut buffer = RolloutBuffer::default();
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut coms = Vec::new();
    let mut frames = Vec::new();
    let total_return = run_episode(&mut sim, &mut controller, checkpoint.episode_length, &mut rng, &mut buffer, |s| {
        let step = s.steps() - 1;
        coms.push(s.robot_com());
        if step % frame_every == 0 {
            frames.push(frame_svg(s, step));
        }
    });
    let rows = buffer
        .rewards
        .iter()
        .zip(&coms)
        .enumerate()
        .map(|(step, (&reward, com))| TrajectoryRow {
            step,
            reward,
            com_x: com[0],
            com_y: com[1],
        })
        .collect();
    Ok(Replay {
        total_return,
        recorded_return: checkpoint.eval_return,
        rows,
        frames,
    })
}

/// Loads inputs from disk, replays, and writes `trajectory.csv` plus
/// `frame-<step>.svg` files into `out`.
pub fn replay_to_dir(checkpoint: &Path, genome: &Path, task: Task, frame_every: usize, out: &Path) -> Result<Replay> {
    let ck = Checkpoint::load(checkpoint)?;
    let text = fs::read_to_string(genome).map_err(|e| Error::io(genome, e))?;
    let genome: MorphGenome = text.parse()?;
    let result = replay(&ck, &genome, task, frame_every)?;
    create_dir(out)?;
    write(&out.join("trajectory.csv"), trajectory_csv(&result.rows))?;
    for (i, frame) in result.frames.iter().enumerate() {
        write(&out.join(format!("frame-{:05}.svg", i * frame_every)), frame)?;
    }
    Ok(result)
}
