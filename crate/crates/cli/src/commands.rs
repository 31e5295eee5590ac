//! The `run`, `batch`, `compare` and `report` subcommands as library calls.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pimp_gp::analysis::{self, ComparisonRow};
use pimp_gp::engine::run_with_observer;
use pimp_gp::selection::Role;
use pimp_gp::telemetry::{aggregate_batch, fmt_sig6, mean, sample_sd, BatchSummary, GenerationRecord, Metric, RunSummary};
use pimp_gp::RunConfig;
use rayon::prelude::*;
use serde::Serialize;

use crate::artifacts::{
    find_cells, resolve_out_dir, targets_normalized, write_atomic, write_runs_csv, write_snapshot_csv,
    CellRuns, RunMetadata, RunPaths, Versions, RUNS_CSV, SUMMARY_CSV,
};
use crate::config::{ExperimentFile, ExperimentSpec, Overrides, RunFile};
use crate::error::CliError;
use crate::presets;

/// Where a run or experiment definition comes from.
#[derive(Debug, Clone)]
pub enum Source {
    File(PathBuf),
    Preset(String),
}

impl Source {
    pub fn run_file(&self) -> Result<RunFile, CliError> {
        match self {
            Source::File(p) => RunFile::load(p),
            Source::Preset(name) => RunFile::parse(presets::run_preset(name)?).map_err(|e| e.context(name)),
        }
    }

    pub fn experiment_file(&self) -> Result<ExperimentFile, CliError> {
        match self {
            Source::File(p) => ExperimentFile::load(p),
            Source::Preset(name) => {
                ExperimentFile::parse(presets::batch_preset(name)?).map_err(|e| e.context(name))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub paths: RunPaths,
    pub summary: RunSummary,
}

/// `pimp run`: resolves the config and writes the three run artifacts into `out`.
pub fn cmd_run(source: &Source, overrides: &Overrides, out: Option<&Path>) -> Result<RunOutcome, CliError> {
    let cfg = source.run_file()?.resolve(overrides)?;
    let dir = resolve_out_dir(out, None);
    execute_run(&cfg, &dir)
}

/// Runs one config, streaming generation records to disk, then writes the
/// snapshot and finally the metadata file.
pub fn execute_run(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("creating {}: {e}", dir.display())))?;
    let paths = RunPaths::new(dir, cfg);
    let label = format!("{} seed {}", cfg.cell_name(), cfg.seed);
    let mut result = None;
    write_atomic(&paths.jsonl, |w| {
        let mut write_err = None;
        let outcome = run_with_observer(cfg.clone(), |rec| {
            log::debug!(
                "{label} gen {}: best {} mean depth {:.2}/{:.2}",
                rec.generation,
                fmt_sig6(rec.best_fitness),
                rec.mean_solution_depth,
                rec.mean_preference_depth
            );
            if write_err.is_none() {
                if let Err(e) = rec.write_jsonl(&mut *w) {
                    write_err = Some(e);
                }
            }
        });
        if let Some(e) = write_err {
            return Err(std::io::Error::other(e.to_string()));
        }
        result = Some(outcome);
        Ok(())
    })?;
    let result = match result {
        Some(Ok(r)) => r,
        Some(Err(e)) => {
            let _ = fs::remove_file(&paths.jsonl);
            return Err(CliError::runtime(format!("{label}: {e}")));
        }
        None => unreachable!("writer closure always runs"),
    };
    write_atomic(&paths.snapshot, |w| write_snapshot_csv(&result.snapshots, w))?;
    let summary = result.summary();
    let meta = RunMetadata {
        config: cfg.clone(),
        versions: Versions::current(),
        fitness_cases: fitness_case_count(cfg),
        targets_normalized: targets_normalized(cfg),
        summary: summary.clone(),
        jsonl: file_name(&paths.jsonl),
        snapshot: file_name(&paths.snapshot),
    };
    write_atomic(&paths.meta, |w| {
        serde_json::to_writer_pretty(&mut *w, &meta)?;
        writeln!(w)
    })?;
    log::info!("{label}: best {} in {:.1}s", fmt_sig6(summary.final_best_fitness), summary.wall_clock_seconds);
    Ok(RunOutcome { paths, summary })
}

fn fitness_case_count(cfg: &RunConfig) -> usize {
    use pimp_gp::problems::CaseSource;
    match cfg.resolve_problem().case_source {
        CaseSource::SampledUniform { n, .. } => n,
        CaseSource::Grid { low, high, step } => {
            pimp_gp::problems::grid_axis(low, high, step).len().pow(cfg.problem.arity() as u32)
        }
        CaseSource::Dataset { .. } => pimp_gp::problems::DIABETES_ROWS,
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub name: String,
    pub dir: PathBuf,
    /// Runs executed by this invocation.
    pub ran: Vec<u64>,
    /// Runs whose artifacts already existed.
    pub skipped: Vec<u64>,
    pub failed: Vec<(u64, String)>,
    /// Present once every seed has completed.
    pub summary: Option<BatchSummary>,
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub out_dir: PathBuf,
    pub cells: Vec<CellOutcome>,
}

impl BatchOutcome {
    pub fn failures(&self) -> Vec<String> {
        self.cells
            .iter()
            .flat_map(|c| c.failed.iter().map(move |(s, m)| format!("{} seed {s} ({m})", c.name)))
            .collect()
    }

    pub fn cell(&self, name: &str) -> Option<&CellOutcome> {
        self.cells.iter().find(|c| c.name == name)
    }
}

/// `pimp batch`: runs every (cell, seed) not already on disk, `jobs` at a time.
pub fn cmd_batch(
    file: &ExperimentFile,
    overrides: &Overrides,
    out: Option<&Path>,
    jobs: usize,
) -> Result<BatchOutcome, CliError> {
    let spec = file.resolve(overrides)?;
    let outcome = run_batch(&spec, out, jobs)?;
    let failed = outcome.failures();
    if failed.is_empty() {
        Ok(outcome)
    } else {
        Err(CliError::PartialBatch { failed })
    }
}

/// Like [`cmd_batch`] but returns the outcome even when some runs failed.
pub fn run_batch(spec: &ExperimentSpec, out: Option<&Path>, jobs: usize) -> Result<BatchOutcome, CliError> {
    let out_dir = resolve_out_dir(out, spec.output_dir.as_deref());
    let mut todo = Vec::new();
    for cell in &spec.cells {
        let dir = out_dir.join(&cell.name);
        for &seed in &spec.seeds {
            let cfg = cell.config(seed);
            let paths = RunPaths::new(&dir, &cfg);
            if paths.is_complete() {
                let existing = RunMetadata::load(&paths.meta)?;
                if existing.config != cfg {
                    return Err(CliError::validation(format!(
                        "{} was produced by a different configuration; use another output directory",
                        paths.meta.display()
                    )));
                }
            } else {
                todo.push((cell.name.clone(), dir.clone(), cfg));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let results: Vec<(String, u64, Result<(), CliError>)> = pool.install(|| {
        todo.par_iter()
            .map(|(name, dir, cfg)| (name.clone(), cfg.seed, execute_run(cfg, dir).map(|_| ())))
            .collect()
    });

    let mut cells = Vec::new();
    for cell in &spec.cells {
        let dir = out_dir.join(&cell.name);
        let mut outcome = CellOutcome {
            name: cell.name.clone(),
            dir: dir.clone(),
            ran: Vec::new(),
            skipped: Vec::new(),
            failed: Vec::new(),
            summary: None,
        };
        for (name, seed, r) in &results {
            if *name == cell.name {
                match r {
                    Ok(()) => outcome.ran.push(*seed),
                    Err(e) => {
                        log::error!("{name} seed {seed}: {e}");
                        outcome.failed.push((*seed, e.to_string()));
                    }
                }
            }
        }
        outcome.skipped = spec.seeds.iter().copied().filter(|s| !outcome.ran.contains(s)).collect();
        outcome.skipped.retain(|s| !outcome.failed.iter().any(|(f, _)| f == s));
        if outcome.failed.is_empty() {
            outcome.summary = Some(summarize_cell(&dir, &spec.seeds)?);
        }
        cells.push(outcome);
    }
    Ok(BatchOutcome { out_dir, cells })
}

/// Aggregates a completed cell; existing summary files are left untouched.
fn summarize_cell(dir: &Path, seeds: &[u64]) -> Result<BatchSummary, CliError> {
    let runs: Vec<RunSummary> = CellRuns::load(dir)?
        .summaries()
        .into_iter()
        .filter(|s| seeds.contains(&s.seed))
        .collect();
    let summary = aggregate_batch(&runs).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    let runs_path = dir.join(RUNS_CSV);
    let summary_path = dir.join(SUMMARY_CSV);
    if !runs_path.exists() || !summary_path.exists() {
        write_atomic(&runs_path, |w| write_runs_csv(&runs, w))?;
        write_atomic(&summary_path, |w| summary.write_csv(w))?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
struct CompareMetadata<'a> {
    batch_a: String,
    batch_b: String,
    cell_a: String,
    cell_b: String,
    pairs: usize,
    test: &'a str,
    alpha: f64,
    exact_max_n: usize,
    min_pairs_for_significance: usize,
}

/// `pimp compare`: one row per metric, pairing the two cells' runs by seed.
///
/// When `out` is given the CSV goes there and a `.meta.json` sidecar records
/// how the p-values were obtained; otherwise the CSV is written to `stdout`.
pub fn cmd_compare(
    dir_a: &Path,
    dir_b: &Path,
    metrics: &[Metric],
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<Vec<ComparisonRow>, CliError> {
    let a = CellRuns::load(dir_a)?;
    let b = CellRuns::load(dir_b)?;
    let (sa, sb) = (a.summaries(), b.summaries());
    let rows = metrics
        .iter()
        .map(|&m| analysis::compare(&sa, &sb, m))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::validation(format!("cannot compare {} with {}: {e}", dir_a.display(), dir_b.display())))?;
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            write_atomic(path, |w| analysis::write_comparison_csv(&rows, w))?;
            let meta = CompareMetadata {
                batch_a: dir_a.display().to_string(),
                batch_b: dir_b.display().to_string(),
                cell_a: a.name(),
                cell_b: b.name(),
                pairs: sa.len(),
                test: "Wilcoxon signed-rank, two-sided, applied unconditionally (no normality pre-test)",
                alpha: analysis::ALPHA,
                exact_max_n: analysis::EXACT_MAX_N,
                min_pairs_for_significance: analysis::MIN_PAIRS_FOR_SIGNIFICANCE,
            };
            let meta_path = path.with_extension("meta.json");
            write_atomic(&meta_path, |w| {
                serde_json::to_writer_pretty(&mut *w, &meta)?;
                writeln!(w)
            })?;
        }
        None => analysis::write_comparison_csv(&rows, &mut *stdout)?,
    }
    Ok(rows)
}

/// File names written by [`cmd_report`].
pub const SERIES_CSV: &str = "generation_series.csv";
pub const HISTOGRAM_CSV: &str = "depth_histograms.csv";
pub const EVENTS_CSV: &str = "improvement_events.csv";

/// `pimp report`: tidy long-format CSVs over every cell in `batch_dir`.
///
/// * `generation_series.csv`: `cell,problem,selection,mutation,generation,metric,n,mean,sd`
///   with one row per metric per generation, aggregated across runs.
/// * `depth_histograms.csv`: `cell,generation,role,chromosome,depth,count`, summed
///   across runs, every `histogram_every` generations plus the last.
/// * `improvement_events.csv`: `cell,seed,generation,preference_depth,is_best_ever`.
pub fn cmd_report(batch_dir: &Path, out: Option<&Path>, histogram_every: usize) -> Result<PathBuf, CliError> {
    let cells = find_cells(batch_dir)?;
    if cells.is_empty() {
        return Err(CliError::validation(format!("{} contains no batch cells", batch_dir.display())));
    }
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| batch_dir.join("report"));
    fs::create_dir_all(&out_dir)?;
    let every = histogram_every.max(1);

    let mut series = csv_writer(&out_dir.join(SERIES_CSV))?;
    series.write_record(["cell", "problem", "selection", "mutation", "generation", "metric", "n", "mean", "sd"])
        .map_err(csv_err)?;
    let mut hist = csv_writer(&out_dir.join(HISTOGRAM_CSV))?;
    hist.write_record(["cell", "generation", "role", "chromosome", "depth", "count"]).map_err(csv_err)?;
    let mut events = csv_writer(&out_dir.join(EVENTS_CSV))?;
    events.write_record(["cell", "seed", "generation", "preference_depth", "is_best_ever"]).map_err(csv_err)?;

    for dir in &cells {
        let cell = CellRuns::load(dir)?;
        let name = cell.name();
        let cfg = cell.config();
        let runs = cell.records()?;
        let generations = runs.iter().map(Vec::len).min().unwrap_or(0);
        for g in 0..generations {
            let recs: Vec<&GenerationRecord> = runs.iter().map(|r| &r[g]).collect();
            for (metric, values) in series_metrics(&recs) {
                if values.is_empty() {
                    continue;
                }
                series
                    .write_record([
                        name.clone(),
                        cfg.problem.to_string(),
                        cfg.selection.label().to_string(),
                        cfg.mutation.label().to_string(),
                        g.to_string(),
                        metric,
                        values.len().to_string(),
                        fmt_sig6(mean(&values)),
                        fmt_sig6(sample_sd(&values)),
                    ])
                    .map_err(csv_err)?;
            }
            if g % every == 0 || g + 1 == generations {
                for role in Role::ALL {
                    for (chromosome, pick) in [("solution", true), ("preference", false)] {
                        let mut counts = vec![0u64; pimp_gp::telemetry::HISTOGRAM_BUCKETS];
                        for r in &recs {
                            let h = r.depth_histograms.get(role);
                            let h = if pick { &h.solution } else { &h.preference };
                            for (c, v) in counts.iter_mut().zip(h) {
                                *c += u64::from(*v);
                            }
                        }
                        for (depth, c) in counts.iter().enumerate() {
                            hist.write_record([
                                name.clone(),
                                g.to_string(),
                                role.name().to_string(),
                                chromosome.to_string(),
                                depth.to_string(),
                                c.to_string(),
                            ])
                            .map_err(csv_err)?;
                        }
                    }
                }
            }
        }
        for (meta, recs) in cell.metas.iter().zip(&runs) {
            for r in recs {
                for e in &r.improvement_events {
                    events
                        .write_record([
                            name.clone(),
                            meta.config.seed.to_string(),
                            r.generation.to_string(),
                            e.preference_depth.to_string(),
                            e.is_best_ever.to_string(),
                        ])
                        .map_err(csv_err)?;
                }
            }
        }
    }
    for w in [&mut series, &mut hist, &mut events] {
        w.flush()?;
    }
    Ok(out_dir)
}

/// Metric name to per-run values at one generation; undefined per-role values are skipped.
fn series_metrics(recs: &[&GenerationRecord]) -> BTreeMap<String, Vec<f64>> {
    let mut m: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut put = |k: String, v: Option<f64>| {
        let e = m.entry(k).or_default();
        if let Some(v) = v {
            e.push(v);
        }
    };
    for r in recs {
        put("best_fitness".into(), Some(r.best_fitness));
        put("best_ever_fitness".into(), Some(r.best_ever_fitness));
        put("mean_fitness".into(), Some(r.mean_fitness));
        put("unique_solution_fraction".into(), Some(r.unique_solution_fraction));
        put("unique_preference_fraction".into(), Some(r.unique_preference_fraction));
        put("mean_solution_depth".into(), Some(r.mean_solution_depth));
        put("mean_preference_depth".into(), Some(r.mean_preference_depth));
        for role in Role::ALL {
            let n = role.name();
            put(format!("fraction_{n}"), Some(*r.role_fractions.get(role)));
            put(format!("solution_depth_{n}"), *r.per_role_mean_depth.get(role));
            put(format!("preference_depth_{n}"), *r.per_role_mean_preference_depth.get(role));
            put(format!("best_fitness_{n}"), *r.per_role_best_fitness.get(role));
        }
    }
    m
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::runtime(e.to_string())
}
