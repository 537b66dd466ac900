//! Generational co-design loop: train newborns, keep elites, refill with
//! mutated children that inherit (or not) their parent's controller.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{graph_hash, FeatureMode, Topology};
use crate::inherit::{check_kind, map_weights, match_graphs, scratch_init, Lineage};
use crate::morpho::{mutate, MorphGenome, MutationConfig};
use crate::policy::{ControllerKind, DesignSpace, PolicyParams};
use crate::ppo::{train_individual, PpoConfig, TrainSetup, UpdateLog};
use crate::sim::{build_body, SimConfig, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Inheritance {
    /// Children start from the parent's weights mapped onto their own graph.
    Transfer,
    /// Children start from fresh weights.
    Scratch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvoConfig {
    pub population: usize,
    pub generations: usize,
    /// Survivors per generation; `None` keeps half, rounded up.
    pub elites: Option<usize>,
    pub mode: FeatureMode,
    pub kind: ControllerKind,
    pub inheritance: Inheritance,
    pub task: Task,
    pub seed: u64,
    pub design_space: DesignSpace,
    pub mutation: MutationConfig,
    pub episode_length: usize,
    pub sim: SimConfig,
    pub ppo: PpoConfig,
}

impl Default for EvoConfig {
    fn default() -> Self {
        Self {
            population: 8,
            generations: 6,
            elites: None,
            mode: FeatureMode::LocalTransfer,
            kind: ControllerKind::Gat,
            inheritance: Inheritance::Transfer,
            task: Task::WalkerLite,
            seed: 0,
            design_space: DesignSpace::default(),
            mutation: MutationConfig::default(),
            episode_length: 256,
            sim: SimConfig::default(),
            ppo: PpoConfig::default(),
        }
    }
}

impl EvoConfig {
    pub fn elite_count(&self) -> usize {
        self.elites.unwrap_or(self.population.div_ceil(2))
    }

    pub fn check(&self) -> Result<()> {
        let m = self.elite_count();
        if m < 1 || m > self.population {
            return Err(Error::Config(format!(
                "elites must lie in 1..={} (got {m})",
                self.population
            )));
        }
        if self.generations == 0 {
            return Err(Error::Config("generations must be at least 1".into()));
        }
        if self.design_space.width == 0 || self.design_space.height == 0 {
            return Err(Error::Config("design space must be non-empty".into()));
        }
        self.mutation.check()?;
        self.sim.check()?;
        self.ppo.check()
    }

    fn setup(&self) -> TrainSetup {
        TrainSetup {
            task: self.task,
            episode_length: self.episode_length,
            sim: self.sim,
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub id: usize,
    pub genome: MorphGenome,
    pub graph_digest: String,
    pub params: PolicyParams,
    /// Set once the individual has been trained.
    pub fitness: Option<f64>,
    pub eval_return: Option<f64>,
    pub failed: bool,
    pub newborn: bool,
    pub parent: Option<usize>,
    pub birth_generation: usize,
    pub training_log: Vec<UpdateLog>,
}

impl Individual {
    fn new(id: usize, genome: MorphGenome, topology: &Topology, params: PolicyParams, parent: Option<usize>, generation: usize) -> Self {
        Self {
            id,
            graph_digest: graph_hash(topology).digest(),
            genome,
            params,
            fitness: None,
            eval_return: None,
            failed: false,
            newborn: true,
            parent,
            birth_generation: generation,
            training_log: Vec::new(),
        }
    }
}

/// One line of the event stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum Event {
    Birth {
        generation: usize,
        id: usize,
        parent: Option<usize>,
        genome: String,
        graph: String,
        lineage: Option<Lineage>,
    },
    Trained {
        generation: usize,
        id: usize,
        fitness: f64,
        eval_return: f64,
        failed: bool,
    },
    Selection {
        generation: usize,
        elites: Vec<usize>,
        dead: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndividualRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub fitness: f64,
    pub genome_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub elite_ids: Vec<usize>,
    pub individuals: Vec<IndividualRecord>,
}

pub const GENERATION_HEADER: &str = "generation,best_fitness,mean_fitness,elite_ids";

pub fn generations_csv(records: &[GenerationRecord]) -> String {
    let mut out = String::from(GENERATION_HEADER);
    out.push('\n');
    for r in records {
        let ids: Vec<String> = r.elite_ids.iter().map(ToString::to_string).collect();
        out.push_str(&format!("{},{},{},{}\n", r.generation, r.best_fitness, r.mean_fitness, ids.join(";")));
    }
    out
}

/// Rng for one purpose of one individual, independent of scheduling.
fn stream(seed: u64, id: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + 2 * id as u64 + purpose);
    rng
}

const INIT: u64 = 0;
const TRAIN: u64 = 1;

fn topology(genome: &MorphGenome, cfg: &EvoConfig) -> Topology {
    Topology::from_body(&build_body(genome, &cfg.sim))
}

/// Driver state for one evolutionary run.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub cfg: EvoConfig,
    pub population: Vec<Individual>,
    pub generation: usize,
    next_id: usize,
    rng: ChaCha8Rng,
}

impl Evolution {
    /// `p` random valid genomes with fresh controllers, all newborn.
    pub fn init_population(cfg: EvoConfig, events: &mut dyn FnMut(&Event)) -> Result<Self> {
        cfg.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut population = Vec::with_capacity(cfg.population);
        for id in 0..cfg.population {
            let genome = MorphGenome::random(cfg.design_space.width, cfg.design_space.height, &mut rng);
            let topo = topology(&genome, &cfg);
            let params = scratch_init(&topo, cfg.kind, cfg.design_space, &mut stream(cfg.seed, id, INIT));
            let ind = Individual::new(id, genome, &topo, params, None, 0);
            events(&birth_event(&ind, None));
            population.push(ind);
        }
        Ok(Self {
            next_id: cfg.population,
            cfg,
            population,
            generation: 0,
            rng,
        })
    }

    /// Trains every newborn in parallel; survivors keep their fitness.
    pub fn train_newborns(&mut self, events: &mut dyn FnMut(&Event)) -> Result<()> {
        let cfg = &self.cfg;
        let setup = cfg.setup();
        let results: Vec<Result<Option<_>>> = self
            .population
            .par_iter()
            .map(|ind| {
                if !ind.newborn {
                    return Ok(None);
                }
                let mut rng = stream(cfg.seed, ind.id, TRAIN);
                train_individual(&ind.genome, ind.params.clone(), &setup, &cfg.ppo, &mut rng).map(Some)
            })
            .collect();
        for (ind, res) in self.population.iter_mut().zip(results) {
            let Some(out) = res? else { continue };
            ind.params = out.params;
            ind.fitness = Some(out.fitness);
            ind.eval_return = Some(out.eval_return);
            ind.failed = out.failed;
            ind.training_log = out.log;
            ind.newborn = false;
            events(&Event::Trained {
                generation: self.generation,
                id: ind.id,
                fitness: out.fitness,
                eval_return: out.eval_return,
                failed: out.failed,
            });
        }
        Ok(())
    }

    /// One generation: train newborns, keep the top `m`, refill by mutation.
    pub fn generation_step(&mut self, events: &mut dyn FnMut(&Event)) -> Result<GenerationRecord> {
        self.train_newborns(events)?;
        let fitness = |i: &Individual| i.fitness.expect("trained");
        let individuals: Vec<IndividualRecord> = self
            .population
            .iter()
            .map(|i| IndividualRecord {
                id: i.id,
                parent: i.parent,
                fitness: fitness(i),
                genome_hash: i.genome.digest(),
            })
            .collect();
        let best = individuals.iter().map(|r| r.fitness).fold(f64::NEG_INFINITY, f64::max);
        let mean = individuals.iter().map(|r| r.fitness).sum::<f64>() / individuals.len() as f64;

        let elites = select_elites(&self.population, self.cfg.elite_count());
        let elite_ids: Vec<usize> = elites.iter().map(|&i| self.population[i].id).collect();
        let dead: Vec<usize> = self
            .population
            .iter()
            .map(|i| i.id)
            .filter(|id| !elite_ids.contains(id))
            .collect();
        events(&Event::Selection {
            generation: self.generation,
            elites: elite_ids.clone(),
            dead,
        });

        let survivors: Vec<Individual> = elites.iter().map(|&i| self.population[i].clone()).collect();
        let mut next = survivors.clone();
        while next.len() < self.cfg.population {
            let parent = &survivors[self.rng.gen_range(0..survivors.len())];
            let child = self.spawn(parent)?;
            events(&birth_event(&child.0, Some(child.1)));
            next.push(child.0);
        }
        self.population = next;
        let record = GenerationRecord {
            generation: self.generation,
            best_fitness: best,
            mean_fitness: mean,
            elite_ids,
            individuals,
        };
        self.generation += 1;
        Ok(record)
    }

    fn spawn(&mut self, parent: &Individual) -> Result<(Individual, Lineage)> {
        let id = self.next_id;
        self.next_id += 1;
        let genome = mutate(&parent.genome, &self.cfg.mutation, &mut self.rng);
        let parent_topo = topology(&parent.genome, &self.cfg);
        let topo = topology(&genome, &self.cfg);
        let corr = match_graphs(&parent_topo, &topo);
        let mut rng = stream(self.cfg.seed, id, INIT);
        let params = match self.cfg.inheritance {
            Inheritance::Transfer => {
                check_kind(&parent.params, self.cfg.kind)?;
                map_weights(&parent.params, &corr, &topo, &mut rng)?
            }
            Inheritance::Scratch => scratch_init(&topo, self.cfg.kind, self.cfg.design_space, &mut rng),
        };
        let lineage = Lineage::new(parent.id, id, &corr);
        let child = Individual::new(id, genome, &topo, params, Some(parent.id), self.generation + 1);
        Ok((child, lineage))
    }

    /// Highest-fitness trained individual, ties to the lower id.
    pub fn best(&self) -> Option<&Individual> {
        self.population
            .iter()
            .filter(|i| i.fitness.is_some())
            .min_by(|a, b| rank(a, b))
    }
}

fn birth_event(ind: &Individual, lineage: Option<Lineage>) -> Event {
    Event::Birth {
        generation: ind.birth_generation,
        id: ind.id,
        parent: ind.parent,
        genome: ind.genome.to_string(),
        graph: ind.graph_digest.clone(),
        lineage,
    }
}

/// Descending fitness, then ascending id.
fn rank(a: &Individual, b: &Individual) -> Ordering {
    let (fa, fb) = (a.fitness.unwrap_or(f64::NEG_INFINITY), b.fitness.unwrap_or(f64::NEG_INFINITY));
    fb.total_cmp(&fa).then(a.id.cmp(&b.id))
}

/// Indices of the top `m` individuals, best first.
pub fn select_elites(population: &[Individual], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..population.len()).collect();
    idx.sort_by(|&a, &b| rank(&population[a], &population[b]));
    idx.truncate(m);
    idx
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub best: Individual,
    pub history: Vec<GenerationRecord>,
}

/// Runs all generations and returns the best trained individual.
pub fn run(cfg: EvoConfig, events: &mut dyn FnMut(&Event)) -> Result<RunResult> {
    let mut evo = Evolution::init_population(cfg, events)?;
    let mut history = Vec::new();
    for _ in 0..evo.cfg.generations {
        history.push(evo.generation_step(events)?);
    }
    let best = evo.best().cloned().expect("at least one generation trained");
    Ok(RunResult { best, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(inheritance: Inheritance, kind: ControllerKind) -> EvoConfig {
        EvoConfig {
            population: 4,
            generations: 2,
            kind,
            inheritance,
            design_space: DesignSpace { width: 3, height: 3 },
            episode_length: 16,
            ppo: PpoConfig {
                total_updates: 1,
                steps_per_batch: 32,
                minibatch_size: 16,
                epochs: 1,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn with_fitness(fs: &[f64]) -> Vec<Individual> {
        let cfg = tiny(Inheritance::Transfer, ControllerKind::Gat);
        let evo = Evolution::init_population(EvoConfig { population: fs.len(), ..cfg }, &mut |_| {}).unwrap();
        evo.population
            .into_iter()
            .zip(fs)
            .map(|(mut i, f)| {
                i.fitness = Some(*f);
                i.newborn = false;
                i
            })
            .collect()
    }

    #[test]
    fn top_m_selection() {
        let pop = with_fitness(&[3.0, 1.0, 2.0]);
        assert_eq!(select_elites(&pop, 2), vec![0, 2]);
    }

    #[test]
    fn ties_go_to_lower_id() {
        let pop = with_fitness(&[1.0, 2.0, 2.0, 2.0]);
        assert_eq!(select_elites(&pop, 2), vec![1, 2]);
    }

    #[test]
    fn failed_individuals_rank_last() {
        let pop = with_fitness(&[crate::ppo::FAILED_FITNESS, -3.0]);
        assert_eq!(select_elites(&pop, 1), vec![1]);
    }

    #[test]
    fn init_population_is_valid_and_newborn() {
        let cfg = tiny(Inheritance::Transfer, ControllerKind::Gat);
        let a = Evolution::init_population(cfg.clone(), &mut |_| {}).unwrap();
        let b = Evolution::init_population(cfg, &mut |_| {}).unwrap();
        assert_eq!(a.population, b.population);
        assert!(a.population.iter().all(|i| i.genome.is_valid() && i.newborn && i.fitness.is_none()));
    }

    #[test]
    fn config_bounds() {
        let mut cfg = tiny(Inheritance::Transfer, ControllerKind::Gat);
        cfg.elites = Some(0);
        assert!(cfg.check().is_err());
        cfg.elites = Some(5);
        assert!(cfg.check().is_err());
        cfg.elites = None;
        assert_eq!(cfg.elite_count(), 2);
        cfg.generations = 0;
        assert!(cfg.check().is_err());
    }

    #[test]
    fn zero_mutation_transfer_clones_elites() {
        let mut cfg = tiny(Inheritance::Transfer, ControllerKind::Gat);
        cfg.mutation.per_cell_rate = 0.0;
        let mut evo = Evolution::init_population(cfg, &mut |_| {}).unwrap();
        let rec = evo.generation_step(&mut |_| {}).unwrap();
        assert_eq!(evo.population.len(), 4);
        for child in evo.population.iter().filter(|i| i.newborn) {
            let parent = evo.population.iter().find(|i| Some(i.id) == child.parent).unwrap();
            assert!(rec.elite_ids.contains(&parent.id));
            assert_eq!(child.genome, parent.genome);
            assert_eq!(child.params, parent.params);
        }
    }

    #[test]
    fn elites_keep_fitness_and_best_never_drops() {
        let cfg = EvoConfig {
            generations: 3,
            ..tiny(Inheritance::Transfer, ControllerKind::Gat)
        };
        let mut events = Vec::new();
        let res = run(cfg, &mut |e| events.push(e.clone())).unwrap();
        assert!(res.history.windows(2).all(|w| w[1].best_fitness >= w[0].best_fitness));
        assert_eq!(res.best.fitness, Some(res.history.last().unwrap().best_fitness));
        let trained = events.iter().filter(|e| matches!(e, Event::Trained { .. })).count();
        // 4 founders, then 2 newborns in each later generation.
        assert_eq!(trained, 4 + 2 * 2);
    }

    #[test]
    fn scratch_children_share_no_parent_weights() {
        let mut cfg = tiny(Inheritance::Scratch, ControllerKind::Mlp);
        cfg.mutation.per_cell_rate = 0.0;
        let mut evo = Evolution::init_population(cfg, &mut |_| {}).unwrap();
        evo.generation_step(&mut |_| {}).unwrap();
        for child in evo.population.iter().filter(|i| i.newborn) {
            let parent = evo.population.iter().find(|i| Some(i.id) == child.parent).unwrap();
            let w = &parent.params.actor.hidden.w1;
            let c = &child.params.actor.hidden.w1;
            assert!(w.iter().zip(c).all(|(a, b)| a != b || *a == 0.0));
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = tiny(Inheritance::Transfer, ControllerKind::Mlp);
        let a = run(cfg.clone(), &mut |_| {}).unwrap();
        let b = run(cfg, &mut |_| {}).unwrap();
        assert_eq!(generations_csv(&a.history), generations_csv(&b.history));
        assert_eq!(a.best.params, b.best.params);
    }
}
