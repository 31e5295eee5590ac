use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pimp_cli::config::{to_run_file, Overrides, SeedSet};
use pimp_cli::presets::{BATCH_PRESETS, RUN_PRESETS};
use pimp_cli::{cmd_batch, cmd_compare, cmd_report, cmd_run, CliError, Source};
use pimp_gp::telemetry::Metric;

/// Genetic programming with evolvable mate-choice preferences.
#[derive(Parser)]
#[command(name = "pimp", version, about)]
struct Cli {
    /// Log progress (-v per run, -vv per generation). RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its JSONL stream, snapshot and metadata.
    Run {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        overrides: OverrideArgs,
        /// Seed for this run.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory [default: $PIMP_OUT_DIR or ./runs].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment matrix: problems x strategies x mutations x seeds.
    Batch {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        overrides: OverrideArgs,
        /// First seed, replacing the spec's seed set (use with --seed-count).
        #[arg(long, requires = "seed_count")]
        first_seed: Option<u64>,
        /// Number of consecutive seeds, replacing the spec's seed set.
        #[arg(long)]
        seed_count: Option<u64>,
        /// Output directory [default: spec output_dir, $PIMP_OUT_DIR or ./runs].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Runs executed concurrently.
        #[arg(long, short = 'j', default_value_t = default_jobs())]
        jobs: usize,
    },
    /// Compare two batch cells run on the same seeds.
    Compare {
        batch_a: PathBuf,
        batch_b: PathBuf,
        /// Metrics to compare [default: fitness, unique, depth].
        #[arg(long = "metric", short = 'm')]
        metrics: Vec<String>,
        /// Write the report CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write tidy long-format CSVs for plotting from a batch directory.
    Report {
        batch_dir: PathBuf,
        /// Output directory [default: <batch_dir>/report].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Generation stride for the depth-histogram table.
        #[arg(long, default_value_t = 100)]
        histogram_every: usize,
    },
    /// Inspect presets and resolved configurations.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// List the built-in run and batch presets.
    List,
    /// Print a preset's file contents.
    Preset { name: String },
    /// Print a run config with every default filled in.
    Resolve {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        overrides: OverrideArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct SourceArgs {
    /// TOML config or experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset name (see `pimp config list`).
    #[arg(long)]
    preset: Option<String>,
}

impl SourceArgs {
    fn source(&self) -> Source {
        match (&self.config, &self.preset) {
            (Some(p), _) => Source::File(p.clone()),
            (None, Some(n)) => Source::Preset(n.clone()),
            (None, None) => unreachable!("clap enforces one source"),
        }
    }
}

#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    population_size: Option<usize>,
}

impl OverrideArgs {
    fn overrides(&self, seed: Option<u64>) -> Overrides {
        Overrides {
            seed,
            generations: self.generations,
            population_size: self.population_size,
            ..Default::default()
        }
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    let mut stdout = io::stdout().lock();
    match command {
        Command::Run { source, overrides, seed, out } => {
            let outcome = cmd_run(&source.source(), &overrides.overrides(seed), out.as_deref())?;
            writeln!(stdout, "{}", outcome.paths.jsonl.display())?;
            writeln!(stdout, "{}", outcome.paths.snapshot.display())?;
            writeln!(stdout, "{}", outcome.paths.meta.display())?;
        }
        Command::Batch { source, overrides, first_seed, seed_count, out, jobs } => {
            let mut spec = source.source().experiment_file()?;
            if let Some(count) = seed_count {
                spec.seeds = SeedSet::Range { first: first_seed.unwrap_or(0), count };
            }
            let outcome = cmd_batch(&spec, &overrides.overrides(None), out.as_deref(), jobs)?;
            for c in &outcome.cells {
                writeln!(stdout, "{}: {} ran, {} skipped -> {}", c.name, c.ran.len(), c.skipped.len(), c.dir.display())?;
            }
        }
        Command::Compare { batch_a, batch_b, metrics, out } => {
            let metrics = if metrics.is_empty() {
                vec![Metric::FinalBestFitness, Metric::UniqueSolutionFraction, Metric::MeanSolutionDepth]
            } else {
                metrics
                    .iter()
                    .map(|m| Metric::parse(m).ok_or_else(|| CliError::validation(format!("unknown metric `{m}`"))))
                    .collect::<Result<_, _>>()?
            };
            cmd_compare(&batch_a, &batch_b, &metrics, out.as_deref(), &mut stdout)?;
        }
        Command::Report { batch_dir, out, histogram_every } => {
            let dir = cmd_report(&batch_dir, out.as_deref(), histogram_every)?;
            writeln!(stdout, "{}", dir.display())?;
        }
        Command::Config { action } => match action {
            ConfigAction::List => {
                for (kind, table) in [("run", RUN_PRESETS), ("batch", BATCH_PRESETS)] {
                    for (name, _) in table {
                        writeln!(stdout, "{kind}\t{name}")?;
                    }
                }
            }
            ConfigAction::Preset { name } => {
                let text = pimp_cli::presets::run_preset(&name).or_else(|_| pimp_cli::presets::batch_preset(&name))?;
                write!(stdout, "{text}")?;
            }
            ConfigAction::Resolve { source, overrides, seed } => {
                let cfg = source.source().run_file()?.resolve(&overrides.overrides(seed))?;
                write!(stdout, "{}", to_run_file(&cfg)?)?;
            }
        },
    }
    Ok(())
}
