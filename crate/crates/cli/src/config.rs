//! TOML run and experiment files.
//!
//! A run file names a problem and optionally overrides any [`RunConfig`]
//! field. `selection` and `mutation` accept either a short name
//! (`"pimp"`, `"subtree"`, `"hybrid"`, ...) or a full table with a `kind`
//! key, so a resolved config serialized back to TOML parses to itself.

use std::path::{Path, PathBuf};

use pimp_gp::problems::CaseSource;
use pimp_gp::{MutationStrategy, ProblemId, RunConfig, SelectionStrategy};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Every optional [`RunConfig`] field, as written in a file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elitism: Option<pimp_gp::engine::Elitism>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_min_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_max_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossover_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cases: Option<CaseSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_snapshots: Option<Vec<usize>>,
}

impl Overrides {
    /// Fields set in `other` win.
    pub fn merged(&self, other: &Overrides) -> Overrides {
        macro_rules! pick {
            ($($f:ident),*) => { Overrides { $($f: other.$f.clone().or_else(|| self.$f.clone())),* } };
        }
        pick!(
            seed,
            population_size,
            generations,
            elitism,
            init_min_depth,
            init_max_depth,
            crossover_prob,
            mutation_prob,
            max_depth,
            cases,
            snapshots,
            extra_snapshots
        )
    }
}

/// A run file: problem plus optional strategies and overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub problem: ProblemId,
    pub selection: Option<toml::Value>,
    pub mutation: Option<toml::Value>,
    pub overrides: Overrides,
}

impl RunFile {
    pub fn parse(text: &str) -> Result<RunFile, CliError> {
        let invalid = |m: &str| CliError::validation(format!("invalid run config: {}", m.trim()));
        let mut table: toml::Table = toml::from_str(text).map_err(|e| invalid(e.message()))?;
        let problem = table.remove("problem").ok_or_else(|| invalid("missing field `problem`"))?;
        let problem = problem
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| field_error("problem", format!("unknown problem {problem}")))?;
        let selection = table.remove("selection");
        let mutation = table.remove("mutation");
        let overrides = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| invalid(e.message()))?;
        Ok(RunFile { problem, selection, mutation, overrides })
    }

    pub fn load(path: &Path) -> Result<RunFile, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
        RunFile::parse(&text).map_err(|e| e.context(&path.display().to_string()))
    }

    /// Applies defaults, then the file's values, then `cli` on top.
    pub fn resolve(&self, cli: &Overrides) -> Result<RunConfig, CliError> {
        let selection = match &self.selection {
            Some(v) => parse_selection(v)?,
            None => SelectionStrategy::pimp(),
        };
        let mutation = match &self.mutation {
            Some(v) => Some(parse_mutation(v)?),
            None => None,
        };
        build_config(self.problem, selection, mutation, &self.overrides.merged(cli))
    }
}

/// Builds and validates a config; a bare `"hybrid"` expands to the staged
/// schedule sized to the final generation count.
pub fn build_config(
    problem: ProblemId,
    selection: SelectionStrategy,
    mutation: Option<MutationSpec>,
    o: &Overrides,
) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::new(problem, selection, MutationStrategy::subtree());
    if let Some(g) = o.generations {
        cfg.generations = g;
    }
    cfg.mutation = match mutation.unwrap_or(MutationSpec::Explicit(MutationStrategy::subtree())) {
        MutationSpec::StagedHybrid => MutationStrategy::staged_hybrid(cfg.generations),
        MutationSpec::Explicit(m) => m,
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = &o.$f { cfg.$f = v.clone(); })* };
    }
    set!(seed, population_size, elitism, init_min_depth, init_max_depth, crossover_prob, mutation_prob, max_depth);
    set!(snapshots, extra_snapshots);
    if o.cases.is_some() {
        cfg.cases = o.cases.clone();
    }
    cfg.validate().map_err(|e| CliError::validation(e.to_string()))?;
    Ok(cfg)
}

/// A mutation as written in a file, before the generation count is known.
#[derive(Debug, Clone, PartialEq)]
pub enum MutationSpec {
    StagedHybrid,
    Explicit(MutationStrategy),
}

pub fn parse_selection(v: &toml::Value) -> Result<SelectionStrategy, CliError> {
    match v {
        toml::Value::String(s) => match s.as_str() {
            "pimp" => Ok(SelectionStrategy::pimp()),
            "tournament" => Ok(SelectionStrategy::tournament()),
            other => Err(field_error("selection", format!("unknown selection kind `{other}`"))),
        },
        toml::Value::Table(_) => v
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| field_error("selection", e.message().trim().to_string())),
        _ => Err(field_error("selection", "expected a name or a table".into())),
    }
}

pub fn parse_mutation(v: &toml::Value) -> Result<MutationSpec, CliError> {
    match v {
        toml::Value::String(s) => match s.as_str() {
            "subtree" => Ok(MutationSpec::Explicit(MutationStrategy::subtree())),
            "node-replacement" => Ok(MutationSpec::Explicit(MutationStrategy::node_replacement())),
            "none" => Ok(MutationSpec::Explicit(MutationStrategy::None)),
            "hybrid" => Ok(MutationSpec::StagedHybrid),
            other => Err(field_error("mutation", format!("unknown mutation kind `{other}`"))),
        },
        toml::Value::Table(_) => v
            .clone()
            .try_into()
            .map(MutationSpec::Explicit)
            .map_err(|e: toml::de::Error| field_error("mutation", e.message().trim().to_string())),
        _ => Err(field_error("mutation", "expected a name or a table".into())),
    }
}

fn field_error(field: &str, message: String) -> CliError {
    CliError::validation(format!("invalid field `{field}`: {message}"))
}

/// Serializes a resolved config as a run file that parses back to it.
pub fn to_run_file(cfg: &RunConfig) -> Result<String, CliError> {
    toml::to_string(cfg).map_err(|e| CliError::runtime(format!("cannot serialize config: {e}")))
}

/// Seeds of an experiment: `{ first, count }` or an explicit list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSet {
    Range { first: u64, count: u64 },
    List(Vec<u64>),
}

impl Default for SeedSet {
    fn default() -> Self {
        SeedSet::Range { first: 0, count: 30 }
    }
}

impl SeedSet {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSet::Range { first, count } => (*first..first + count).collect(),
            SeedSet::List(v) => v.clone(),
        }
    }
}

/// A batch: the full matrix problems × strategies × mutations × seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub problems: Vec<ProblemId>,
    pub strategies: Vec<toml::Value>,
    pub mutations: Vec<toml::Value>,
    #[serde(default)]
    pub seeds: SeedSet,
    #[serde(default)]
    pub overrides: Overrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// A validated experiment, one config per (cell, seed).
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub cells: Vec<Cell>,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

/// One (problem, selection, mutation) combination; `template` carries seed 0.
#[derive(Debug, Clone)]
pub struct Cell {
    pub name: String,
    pub template: RunConfig,
}

impl Cell {
    pub fn config(&self, seed: u64) -> RunConfig {
        self.template.clone().with_seed(seed)
    }
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<ExperimentFile, CliError> {
        toml::from_str(text)
            .map_err(|e| CliError::validation(format!("invalid experiment spec: {}", e.message().trim())))
    }

    pub fn load(path: &Path) -> Result<ExperimentFile, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
        ExperimentFile::parse(&text).map_err(|e| e.context(&path.display().to_string()))
    }

    pub fn resolve(&self, cli: &Overrides) -> Result<ExperimentSpec, CliError> {
        for (field, empty) in [
            ("problems", self.problems.is_empty()),
            ("strategies", self.strategies.is_empty()),
            ("mutations", self.mutations.is_empty()),
        ] {
            if empty {
                return Err(field_error(field, "must not be empty".into()));
            }
        }
        let seeds = self.seeds.seeds();
        if seeds.is_empty() {
            return Err(field_error("seeds", "must not be empty".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(field_error("seeds", "contains duplicates".into()));
        }
        let overrides = self.overrides.merged(cli);
        let strategies = self.strategies.iter().map(parse_selection).collect::<Result<Vec<_>, _>>()?;
        let mutations = self.mutations.iter().map(parse_mutation).collect::<Result<Vec<_>, _>>()?;
        let mut cells = Vec::new();
        for &problem in &self.problems {
            for &selection in &strategies {
                for mutation in &mutations {
                    let template = build_config(problem, selection, Some(mutation.clone()), &overrides)?;
                    let name = template.cell_name();
                    if cells.iter().any(|c: &Cell| c.name == name) {
                        return Err(CliError::validation(format!("duplicate cell `{name}`")));
                    }
                    cells.push(Cell { name, template });
                }
            }
        }
        Ok(ExperimentSpec { cells, seeds, output_dir: self.output_dir.clone() })
    }
}
