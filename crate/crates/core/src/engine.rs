//! The generational loop: initialization, breeding, depth limiting and replacement.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ramped_half_and_half, Evaluator, ExprError, ExprTree, FunctionSet};
use crate::problems::{CaseSource, FitnessCases, Problem, ProblemError, ProblemId};
use crate::selection::{classify_roles, select_pair, Role, RoleRecord, SelectionStrategy};
use crate::telemetry::{record_improvement, GenerationRecord, ImprovementEvent, RunSummary};
use crate::variation::{subtree_crossover, MutationStrategy, VariationError};

/// RNG stream for fitness-case sampling.
const CASES_STREAM: u64 = 0;
/// RNG stream for initialization and breeding.
const EVOLUTION_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid config: `{field}` {message}")]
    Config { field: &'static str, message: String },
    #[error(transparent)]
    Variation(#[from] VariationError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

fn config_error(field: &'static str, message: impl Into<String>) -> EngineError {
    EngineError::Config { field, message: message.into() }
}

/// A solution chromosome paired with a preference chromosome, plus cached outputs.
#[derive(Debug, Clone)]
pub struct Individual {
    solution: ExprTree,
    preference: ExprTree,
    solution_depth: usize,
    preference_depth: usize,
    fitness: f64,
    semantics: Vec<f64>,
    preference_semantics: Vec<f64>,
}

impl Individual {
    /// Evaluates both chromosomes. Preference outputs are only computed when
    /// `with_preference` is set (tournament runs never read them).
    pub fn evaluate(
        solution: ExprTree,
        preference: ExprTree,
        cases: &FitnessCases,
        evaluator: &mut Evaluator,
        with_preference: bool,
    ) -> Result<Self, ExprError> {
        let semantics = evaluator.semantics(&solution, cases)?;
        let preference_semantics =
            if with_preference { evaluator.semantics(&preference, cases)? } else { Vec::new() };
        Ok(Individual {
            fitness: mse(&semantics, cases.targets()),
            solution_depth: solution.depth(),
            preference_depth: preference.depth(),
            solution,
            preference,
            semantics,
            preference_semantics,
        })
    }

    pub fn solution(&self) -> &ExprTree {
        &self.solution
    }

    pub fn preference(&self) -> &ExprTree {
        &self.preference
    }

    pub fn fitness(&self) -> f64 {
        self.fitness
    }

    pub fn semantics(&self) -> &[f64] {
        &self.semantics
    }

    pub fn preference_semantics(&self) -> &[f64] {
        &self.preference_semantics
    }

    pub fn solution_depth(&self) -> usize {
        self.solution_depth
    }

    pub fn preference_depth(&self) -> usize {
        self.preference_depth
    }
}

pub fn mse(outputs: &[f64], targets: &[f64]) -> f64 {
    debug_assert_eq!(outputs.len(), targets.len());
    let sum: f64 = outputs
        .iter()
        .zip(targets)
        .map(|(y, t)| {
            let d = y - t;
            d * d
        })
        .sum();
    sum / targets.len() as f64
}

/// Mean squared error of `tree` on `cases`.
pub fn fitness(tree: &ExprTree, cases: &FitnessCases, evaluator: &mut Evaluator) -> Result<f64, ExprError> {
    let out = evaluator.semantics(tree, cases)?;
    let f = mse(&out, cases.targets());
    evaluator.recycle(out);
    Ok(f)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Elitism {
    #[default]
    None,
}

fn default_true() -> bool {
    true
}

/// Every knob of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemId,
    pub seed: u64,
    pub population_size: usize,
    pub generations: usize,
    #[serde(default)]
    pub elitism: Elitism,
    pub init_min_depth: usize,
    pub init_max_depth: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub max_depth: usize,
    pub selection: SelectionStrategy,
    pub mutation: MutationStrategy,
    /// Overrides the problem's default fitness-case protocol.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cases: Option<CaseSource>,
    /// Whether full-population snapshots are kept at generation 0, schedule
    /// switch points and termination.
    #[serde(default = "default_true")]
    pub snapshots: bool,
    /// Extra generations to snapshot.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_snapshots: Vec<usize>,
}

impl RunConfig {
    /// Defaults for `problem`: population 100, 1500 generations (500 for
    /// Diabetes), init depth 2..7, crossover 0.9, mutation 0.05, max depth 17.
    pub fn new(problem: ProblemId, selection: SelectionStrategy, mutation: MutationStrategy) -> Self {
        let generations = if problem == ProblemId::Diabetes { 500 } else { 1500 };
        let mutation = match mutation {
            MutationStrategy::Hybrid { .. } => MutationStrategy::staged_hybrid(generations),
            m => m,
        };
        RunConfig {
            problem,
            seed: 0,
            population_size: 100,
            generations,
            elitism: Elitism::None,
            init_min_depth: 2,
            init_max_depth: 7,
            crossover_prob: 0.9,
            mutation_prob: 0.05,
            max_depth: 17,
            selection,
            mutation,
            cases: None,
            snapshots: true,
            extra_snapshots: Vec::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_generations(mut self, generations: usize) -> Self {
        if let MutationStrategy::Hybrid { phases } = &mut self.mutation {
            if let Some(last) = phases.last_mut() {
                if last.end == self.generations && last.start < generations {
                    last.end = generations;
                }
            }
        }
        self.generations = generations;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.population_size < 2 || self.population_size % 2 != 0 {
            return Err(config_error("population_size", "must be even and at least 2"));
        }
        if self.generations == 0 {
            return Err(config_error("generations", "must be at least 1"));
        }
        for (field, p) in [("crossover_prob", self.crossover_prob), ("mutation_prob", self.mutation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_error(field, format!("{p} is not a probability")));
            }
        }
        if self.init_min_depth > self.init_max_depth {
            return Err(config_error("init_min_depth", "exceeds init_max_depth"));
        }
        if self.init_max_depth > self.max_depth {
            return Err(config_error("init_max_depth", "exceeds max_depth"));
        }
        self.selection.validate().map_err(|m| config_error("selection", m))?;
        self.mutation
            .validate(self.generations)
            .map_err(|e| config_error("mutation", e.to_string()))?;
        if let Some(CaseSource::Grid { low, high, step }) = &self.cases {
            if !(*step > 0.0 && high >= low) {
                return Err(config_error("cases", "grid needs step > 0 and high >= low"));
            }
        }
        if let Some(CaseSource::SampledUniform { n, low, high }) = &self.cases {
            if *n == 0 || high < low {
                return Err(config_error("cases", "sampling needs n > 0 and high >= low"));
            }
        }
        Ok(())
    }

    pub fn resolve_problem(&self) -> Problem {
        let mut p = Problem::preset(self.problem);
        if let Some(c) = &self.cases {
            p.case_source = c.clone();
        }
        p
    }

    /// `<problem>_<selection>_<mutation>`, used for cell and file names.
    pub fn cell_name(&self) -> String {
        format!("{}_{}_{}", self.problem, self.selection.label(), self.mutation.label())
    }

    pub fn snapshot_generations(&self) -> Vec<usize> {
        if !self.snapshots {
            return Vec::new();
        }
        let mut g = vec![0, self.generations - 1];
        g.extend(self.mutation.switch_points());
        g.extend(self.extra_snapshots.iter().copied());
        g.retain(|x| *x < self.generations);
        g.sort_unstable();
        g.dedup();
        g
    }

    fn stream(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Full-population dump at one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub generation: usize,
    pub index: usize,
    pub role: Role,
    pub fitness: f64,
    pub solution_depth: usize,
    pub preference_depth: usize,
    pub solution: String,
    pub preference: String,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: RunConfig,
    pub records: Vec<GenerationRecord>,
    pub snapshots: Vec<SnapshotRow>,
    pub best_fitness_final: f64,
    pub best_ever_fitness: f64,
    pub wall_clock_seconds: f64,
}

impl RunResult {
    pub fn summary(&self) -> RunSummary {
        let last = self.records.last().expect("at least one generation");
        RunSummary {
            seed: self.config.seed,
            generations: self.records.len(),
            final_best_fitness: self.best_fitness_final,
            best_ever_fitness: self.best_ever_fitness,
            unique_solution_fraction: last.unique_solution_fraction,
            unique_preference_fraction: last.unique_preference_fraction,
            mean_solution_depth: last.mean_solution_depth,
            mean_preference_depth: last.mean_preference_depth,
            wall_clock_seconds: self.wall_clock_seconds,
        }
    }
}

/// Returns `child` if it fits under `max_depth`, otherwise a copy of `fallback`.
pub fn enforce_depth_limit(child: ExprTree, fallback: &ExprTree, max_depth: usize) -> ExprTree {
    if child.depth() <= max_depth {
        child
    } else {
        fallback.clone()
    }
}

/// Mutable state of one run between generations.
pub struct Evolution {
    config: RunConfig,
    problem: Problem,
    cases: FitnessCases,
    rng: ChaCha8Rng,
    evaluator: Evaluator,
    population: Vec<Individual>,
    /// Improvement events of the offspring that formed the current population.
    pending_events: Vec<ImprovementEvent>,
    best_ever: f64,
    generation: usize,
}

impl Evolution {
    /// Validates the config, builds the fitness cases and the initial population.
    pub fn new(config: RunConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let problem = config.resolve_problem();
        problem.function_set.validate()?;
        let cases = problem.make_cases(&mut config.stream(CASES_STREAM))?;
        Self::with_cases(config, cases)
    }

    /// Like [`Evolution::new`] but with caller-supplied fitness cases.
    pub fn with_cases(config: RunConfig, cases: FitnessCases) -> Result<Self, EngineError> {
        config.validate()?;
        let problem = config.resolve_problem();
        if cases.arity() != problem.function_set.variable_count {
            return Err(config_error(
                "cases",
                format!("have {} inputs, problem needs {}", cases.arity(), problem.function_set.variable_count),
            ));
        }
        let mut rng = config.stream(EVOLUTION_STREAM);
        let mut evaluator = Evaluator::new();
        let population = initialize(&config, &problem, &cases, &mut rng, &mut evaluator)?;
        let best_ever = population.iter().map(Individual::fitness).fold(f64::INFINITY, f64::min);
        Ok(Evolution {
            config,
            problem,
            cases,
            rng,
            evaluator,
            population,
            pending_events: Vec::new(),
            best_ever,
            generation: 0,
        })
    }

    pub fn population(&self) -> &[Individual] {
        &self.population
    }

    pub fn cases(&self) -> &FitnessCases {
        &self.cases
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Selects `population_size / 2` parent pairs from the current population
    /// and builds its telemetry record.
    pub fn select(&mut self) -> (GenerationRecord, Vec<Role>, Vec<(usize, usize)>) {
        let fitness: Vec<f64> = self.population.iter().map(Individual::fitness).collect();
        let mut roles = RoleRecord::new(self.population.len());
        let pairs: Vec<(usize, usize)> = (0..self.population.len() / 2)
            .map(|_| select_pair(&self.population, &fitness, &self.config.selection, &mut self.rng, &mut roles))
            .collect();
        let (labels, _) = classify_roles(&roles);
        let record = GenerationRecord::build(
            self.generation,
            &self.population,
            &labels,
            pairs.len(),
            self.best_ever,
            std::mem::take(&mut self.pending_events),
        );
        (record, labels, pairs)
    }

    /// Replaces the population with the offspring of `pairs` (no elitism).
    pub fn advance(&mut self, pairs: &[(usize, usize)]) -> Result<(), EngineError> {
        let next_gen = self.generation + 1;
        let (offspring, events) = breed(
            &self.population,
            pairs,
            &self.config,
            &self.problem.function_set,
            next_gen,
            &self.cases,
            self.best_ever,
            &mut self.rng,
            &mut self.evaluator,
        )?;
        let new_best = offspring.iter().map(Individual::fitness).fold(f64::INFINITY, f64::min);
        self.best_ever = self.best_ever.min(new_best);
        for old in std::mem::replace(&mut self.population, offspring) {
            self.evaluator.recycle(old.semantics);
            self.evaluator.recycle(old.preference_semantics);
        }
        self.pending_events = events;
        self.generation = next_gen;
        Ok(())
    }

    /// One full generation: select, record, breed.
    pub fn step(&mut self) -> Result<GenerationRecord, EngineError> {
        let (record, _, pairs) = self.select();
        self.advance(&pairs)?;
        Ok(record)
    }

    pub fn best_ever(&self) -> f64 {
        self.best_ever
    }

    fn snapshot(&self, labels: &[Role]) -> Vec<SnapshotRow> {
        self.population
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(index, (ind, role))| SnapshotRow {
                generation: self.generation,
                index,
                role: *role,
                fitness: ind.fitness,
                solution_depth: ind.solution_depth,
                preference_depth: ind.preference_depth,
                solution: ind.solution.canonical_string(),
                preference: ind.preference.canonical_string(),
            })
            .collect()
    }
}

/// Population of `population_size` individuals; both chromosomes drawn
/// independently by ramped half-and-half.
pub fn initialize<R: Rng + ?Sized>(
    config: &RunConfig,
    problem: &Problem,
    cases: &FitnessCases,
    rng: &mut R,
    evaluator: &mut Evaluator,
) -> Result<Vec<Individual>, EngineError> {
    let fs = &problem.function_set;
    let (lo, hi) = (config.init_min_depth, config.init_max_depth);
    let solutions = ramped_half_and_half(config.population_size, lo, hi, fs, rng);
    let preferences = ramped_half_and_half(config.population_size, lo, hi, fs, rng);
    let with_pref = config.selection.uses_preferences();
    solutions
        .into_iter()
        .zip(preferences)
        .map(|(s, p)| Individual::evaluate(s, p, cases, evaluator, with_pref).map_err(EngineError::from))
        .collect()
}

/// Where an offspring chromosome came from, so unchanged copies reuse cached outputs.
enum Origin {
    Parent(usize),
    New,
}

struct Chromo {
    tree: ExprTree,
    origin: Origin,
}

fn recombine<R: Rng + ?Sized>(
    a: &ExprTree,
    b: &ExprTree,
    pa: usize,
    pb: usize,
    prob: f64,
    rng: &mut R,
) -> (Chromo, Chromo) {
    if rng.gen_bool(prob) {
        let (c1, c2) = subtree_crossover(a, b, rng);
        (Chromo { tree: c1, origin: Origin::New }, Chromo { tree: c2, origin: Origin::New })
    } else {
        (
            Chromo { tree: a.clone(), origin: Origin::Parent(pa) },
            Chromo { tree: b.clone(), origin: Origin::Parent(pb) },
        )
    }
}

/// Breeds two offspring per pair: crossover per chromosome pair, mutation per
/// chromosome, then depth limiting against the contributing parent.
#[allow(clippy::too_many_arguments)]
fn breed<R: Rng + ?Sized>(
    pop: &[Individual],
    pairs: &[(usize, usize)],
    config: &RunConfig,
    fs: &FunctionSet,
    generation: usize,
    cases: &FitnessCases,
    best_ever: f64,
    rng: &mut R,
    evaluator: &mut Evaluator,
) -> Result<(Vec<Individual>, Vec<ImprovementEvent>), EngineError> {
    let mutation = config.mutation.strategy_for_generation(generation)?;
    let with_pref = config.selection.uses_preferences();
    let previous_best = pop.iter().map(Individual::fitness).fold(f64::INFINITY, f64::min);

    let mut offspring = Vec::with_capacity(pop.len());
    let mut events = Vec::new();
    for &(p1, p2) in pairs {
        let (sa, sb) = recombine(&pop[p1].solution, &pop[p2].solution, p1, p2, config.crossover_prob, rng);
        let (qa, qb) =
            recombine(&pop[p1].preference, &pop[p2].preference, p1, p2, config.crossover_prob, rng);
        for (parent, mut sol, mut pref) in [(p1, sa, qa), (p2, sb, qb)] {
            for c in [&mut sol, &mut pref] {
                if rng.gen_bool(config.mutation_prob) && !matches!(mutation, MutationStrategy::None) {
                    c.tree = mutation.apply(&c.tree, fs, rng);
                    c.origin = Origin::New;
                }
            }
            let sol = limit(sol, &pop[parent].solution, parent, config.max_depth);
            let pref = limit(pref, &pop[parent].preference, parent, config.max_depth);
            let child = build_child(pop, sol, pref, cases, evaluator, with_pref)?;
            if let Some(e) =
                record_improvement(child.fitness, previous_best, best_ever, pop[p1].preference_depth)
            {
                events.push(e);
            }
            offspring.push(child);
        }
    }
    Ok((offspring, events))
}

fn limit(c: Chromo, fallback: &ExprTree, parent: usize, max_depth: usize) -> Chromo {
    if c.tree.depth() <= max_depth {
        c
    } else {
        Chromo { tree: enforce_depth_limit(c.tree, fallback, max_depth), origin: Origin::Parent(parent) }
    }
}

fn build_child(
    pop: &[Individual],
    sol: Chromo,
    pref: Chromo,
    cases: &FitnessCases,
    evaluator: &mut Evaluator,
    with_pref: bool,
) -> Result<Individual, ExprError> {
    let (semantics, fitness, solution_depth) = match sol.origin {
        Origin::Parent(i) => (pop[i].semantics.clone(), pop[i].fitness, pop[i].solution_depth),
        Origin::New => {
            let s = evaluator.semantics(&sol.tree, cases)?;
            let f = mse(&s, cases.targets());
            (s, f, sol.tree.depth())
        }
    };
    let (preference_semantics, preference_depth) = match pref.origin {
        Origin::Parent(i) => (pop[i].preference_semantics.clone(), pop[i].preference_depth),
        Origin::New if with_pref => (evaluator.semantics(&pref.tree, cases)?, pref.tree.depth()),
        Origin::New => (Vec::new(), pref.tree.depth()),
    };
    Ok(Individual {
        solution: sol.tree,
        preference: pref.tree,
        solution_depth,
        preference_depth,
        fitness,
        semantics,
        preference_semantics,
    })
}

/// Runs one configuration from initialization to termination.
pub fn run(config: RunConfig) -> Result<RunResult, EngineError> {
    run_with_observer(config, |_| {})
}

/// Like [`run`], calling `observe` with every record as it is produced.
pub fn run_with_observer(
    config: RunConfig,
    mut observe: impl FnMut(&GenerationRecord),
) -> Result<RunResult, EngineError> {
    let started = Instant::now();
    let snapshot_at = config.snapshot_generations();
    let mut evo = Evolution::new(config)?;
    let mut records = Vec::with_capacity(evo.config.generations);
    let mut snapshots = Vec::new();
    loop {
        let (record, labels, pairs) = evo.select();
        if snapshot_at.contains(&evo.generation) {
            snapshots.extend(evo.snapshot(&labels));
        }
        observe(&record);
        records.push(record);
        if evo.generation + 1 >= evo.config.generations {
            break;
        }
        evo.advance(&pairs)?;
    }
    let best_fitness_final = records.last().map(|r| r.best_fitness).unwrap_or(f64::INFINITY);
    Ok(RunResult {
        best_ever_fitness: evo.best_ever,
        config: evo.config,
        records,
        snapshots,
        best_fitness_final,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}
