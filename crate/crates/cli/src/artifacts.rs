//! On-disk layout of runs and batches.
//!
//! A run with stem `<problem>_<selection>_<mutation>_seed<n>` produces
//! `<stem>.jsonl` (one generation record per line), `<stem>_snapshot.csv`
//! and `<stem>_meta.json`. The metadata file is written last, so its presence
//! marks a completed run. A batch cell is a directory of such runs plus
//! `runs.csv` and `summary.csv`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use pimp_gp::engine::SnapshotRow;
use pimp_gp::problems::CaseSource;
use pimp_gp::telemetry::{fmt_sig6, GenerationRecord, RunSummary};
use pimp_gp::RunConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PIMP_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "runs";

pub const RUNS_CSV: &str = "runs.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

/// `--out` flag, then `fallback` (e.g. a spec's output_dir), then the environment, then `runs`.
pub fn resolve_out_dir(flag: Option<&Path>, fallback: Option<&Path>) -> PathBuf {
    flag.or(fallback)
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub jsonl: PathBuf,
    pub snapshot: PathBuf,
    pub meta: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path, cfg: &RunConfig) -> Self {
        let stem = format!("{}_seed{}", cfg.cell_name(), cfg.seed);
        RunPaths {
            jsonl: dir.join(format!("{stem}.jsonl")),
            snapshot: dir.join(format!("{stem}_snapshot.csv")),
            meta: dir.join(format!("{stem}_meta.json")),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.meta.is_file()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub pimp_gp: String,
    pub pimp_cli: String,
    /// Bumped whenever the JSONL or CSV layouts change.
    pub artifact_format: u32,
}

impl Versions {
    pub fn current() -> Self {
        Versions {
            pimp_gp: pimp_gp::VERSION.to_string(),
            pimp_cli: env!("CARGO_PKG_VERSION").to_string(),
            artifact_format: 1,
        }
    }
}

/// Everything needed to reproduce and interpret one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: RunConfig,
    pub versions: Versions,
    pub fitness_cases: usize,
    /// Dataset targets are min-max scaled to [0, 1] before computing MSE.
    pub targets_normalized: bool,
    pub summary: RunSummary,
    pub jsonl: String,
    pub snapshot: String,
}

impl RunMetadata {
    pub fn load(path: &Path) -> Result<RunMetadata, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
    }
}

pub fn targets_normalized(cfg: &RunConfig) -> bool {
    matches!(cfg.resolve_problem().case_source, CaseSource::Dataset { .. })
}

/// Writes `contents` via a temporary sibling and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::runtime(format!("writing {}: {e}", path.display()))
    })
}

pub fn write_snapshot_csv<W: Write>(rows: &[SnapshotRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "generation",
        "index",
        "role",
        "fitness",
        "solution_depth",
        "preference_depth",
        "solution",
        "preference",
    ])?;
    for r in rows {
        w.write_record([
            r.generation.to_string(),
            r.index.to_string(),
            r.role.name().to_string(),
            fmt_sig6(r.fitness),
            r.solution_depth.to_string(),
            r.preference_depth.to_string(),
            r.solution.clone(),
            r.preference.clone(),
        ])?;
    }
    w.flush()
}

pub fn write_runs_csv<W: Write>(runs: &[RunSummary], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "seed",
        "generations",
        "final_best_fitness",
        "best_ever_fitness",
        "unique_solution_fraction",
        "unique_preference_fraction",
        "mean_solution_depth",
        "mean_preference_depth",
        "wall_clock_seconds",
    ])?;
    for r in runs {
        w.write_record([
            r.seed.to_string(),
            r.generations.to_string(),
            fmt_sig6(r.final_best_fitness),
            fmt_sig6(r.best_ever_fitness),
            fmt_sig6(r.unique_solution_fraction),
            fmt_sig6(r.unique_preference_fraction),
            fmt_sig6(r.mean_solution_depth),
            fmt_sig6(r.mean_preference_depth),
            fmt_sig6(r.wall_clock_seconds),
        ])?;
    }
    w.flush()
}

pub fn read_jsonl(path: &Path) -> Result<Vec<GenerationRecord>, CliError> {
    let f = File::open(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        let rec = serde_json::from_str(&line)
            .map_err(|e| CliError::runtime(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// All completed runs in one directory, sorted by seed.
pub fn load_run_metadata(dir: &Path) -> Result<Vec<RunMetadata>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::validation(format!("{}: {e}", dir.display())))?;
    let mut metas = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let is_meta = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("_meta.json"));
        if is_meta {
            metas.push(RunMetadata::load(&path)?);
        }
    }
    metas.sort_by_key(|m| m.config.seed);
    Ok(metas)
}

/// A batch cell read back from disk.
#[derive(Debug, Clone)]
pub struct CellRuns {
    pub dir: PathBuf,
    pub metas: Vec<RunMetadata>,
}

impl CellRuns {
    /// Loads a cell directory; every run must share one configuration apart from the seed.
    pub fn load(dir: &Path) -> Result<CellRuns, CliError> {
        let metas = load_run_metadata(dir)?;
        let first = metas
            .first()
            .ok_or_else(|| CliError::validation(format!("{} contains no completed runs", dir.display())))?;
        let template = first.config.clone().with_seed(0);
        if let Some(m) = metas.iter().find(|m| m.config.clone().with_seed(0) != template) {
            return Err(CliError::validation(format!(
                "{} mixes configurations (seed {} differs from seed {})",
                dir.display(),
                m.config.seed,
                first.config.seed
            )));
        }
        Ok(CellRuns { dir: dir.to_path_buf(), metas })
    }

    pub fn name(&self) -> String {
        self.metas[0].config.cell_name()
    }

    pub fn config(&self) -> &RunConfig {
        &self.metas[0].config
    }

    pub fn summaries(&self) -> Vec<RunSummary> {
        self.metas.iter().map(|m| m.summary.clone()).collect()
    }

    /// Per-generation records of every run, in seed order.
    pub fn records(&self) -> Result<Vec<Vec<GenerationRecord>>, CliError> {
        self.metas.iter().map(|m| read_jsonl(&self.dir.join(&m.jsonl))).collect()
    }
}

/// Subdirectories of `dir` that hold completed runs, sorted by name.
pub fn find_cells(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::validation(format!("{}: {e}", dir.display())))?;
    let mut cells = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.is_dir() && !load_run_metadata(&path)?.is_empty() {
            cells.push(path);
        }
    }
    cells.sort();
    Ok(cells)
}
