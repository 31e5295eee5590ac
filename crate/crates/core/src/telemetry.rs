//! Per-generation metrics, improvement attribution and batch aggregation.

use std::collections::HashSet;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Individual;
use crate::expr::ExprTree;
use crate::selection::{Role, RoleFractions, RoleValues};

/// Depth histograms bucket depths 0..=17; deeper trees land in the last bucket.
pub const HISTOGRAM_BUCKETS: usize = 18;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("cannot aggregate an empty batch")]
    EmptyBatch,
    #[error("batch mixes runs of {expected} and {found} generations (seed {seed})")]
    GenerationMismatch { expected: usize, found: usize, seed: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chromosome {
    Solution,
    Preference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImprovementEvent {
    pub preference_depth: usize,
    pub is_best_ever: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthHistograms {
    pub solution: Vec<u32>,
    pub preference: Vec<u32>,
}

impl Default for DepthHistograms {
    fn default() -> Self {
        DepthHistograms {
            solution: vec![0; HISTOGRAM_BUCKETS],
            preference: vec![0; HISTOGRAM_BUCKETS],
        }
    }
}

/// One JSONL row. Field order here is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_fitness: f64,
    pub best_ever_fitness: f64,
    pub mean_fitness: f64,
    pub unique_solution_fraction: f64,
    pub unique_preference_fraction: f64,
    pub mean_solution_depth: f64,
    pub mean_preference_depth: f64,
    pub pairs_selected: usize,
    pub role_fractions: RoleFractions,
    /// Mean solution depth per role; `None` when the role is empty.
    pub per_role_mean_depth: RoleValues<Option<f64>>,
    pub per_role_mean_preference_depth: RoleValues<Option<f64>>,
    pub per_role_best_fitness: RoleValues<Option<f64>>,
    pub depth_histograms: RoleValues<DepthHistograms>,
    pub improvement_events: Vec<ImprovementEvent>,
}

impl GenerationRecord {
    /// Builds the record for one population given its role labels and the
    /// improvement events of the offspring that formed it.
    pub fn build(
        generation: usize,
        pop: &[Individual],
        roles: &[Role],
        pairs_selected: usize,
        best_ever_fitness: f64,
        improvement_events: Vec<ImprovementEvent>,
    ) -> Self {
        assert_eq!(pop.len(), roles.len());
        let n = pop.len() as f64;
        let best_fitness = pop.iter().map(|i| i.fitness()).fold(f64::INFINITY, f64::min);
        let mean_fitness = pop.iter().map(|i| i.fitness()).sum::<f64>() / n;

        let mut counts = RoleValues::<usize>::default();
        let mut depth_sum = RoleValues::<usize>::default();
        let mut pref_depth_sum = RoleValues::<usize>::default();
        let mut best = RoleValues::<Option<f64>>::default();
        let mut hist = RoleValues::<DepthHistograms>::default();
        for (ind, &role) in pop.iter().zip(roles) {
            let sd = ind.solution_depth();
            let pd = ind.preference_depth();
            *counts.get_mut(role) += 1;
            *depth_sum.get_mut(role) += sd;
            *pref_depth_sum.get_mut(role) += pd;
            let b = best.get_mut(role);
            *b = Some(b.map_or(ind.fitness(), |v| v.min(ind.fitness())));
            let h = hist.get_mut(role);
            h.solution[sd.min(HISTOGRAM_BUCKETS - 1)] += 1;
            h.preference[pd.min(HISTOGRAM_BUCKETS - 1)] += 1;
        }
        let mean_for = |sums: &RoleValues<usize>| {
            RoleValues::from_fn(|r| {
                let c = *counts.get(r);
                (c > 0).then(|| *sums.get(r) as f64 / c as f64)
            })
        };

        GenerationRecord {
            generation,
            best_fitness,
            best_ever_fitness,
            mean_fitness,
            unique_solution_fraction: unique_fraction(pop, Chromosome::Solution),
            unique_preference_fraction: unique_fraction(pop, Chromosome::Preference),
            mean_solution_depth: mean_depth(pop, Chromosome::Solution),
            mean_preference_depth: mean_depth(pop, Chromosome::Preference),
            pairs_selected,
            role_fractions: RoleFractions::from_fn(|r| *counts.get(r) as f64 / n),
            per_role_mean_depth: mean_for(&depth_sum),
            per_role_mean_preference_depth: mean_for(&pref_depth_sum),
            per_role_best_fitness: best,
            depth_histograms: hist,
            improvement_events,
        }
    }

    /// Writes the record as one JSON line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), TelemetryError> {
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

fn chromosome(ind: &Individual, which: Chromosome) -> &ExprTree {
    match which {
        Chromosome::Solution => ind.solution(),
        Chromosome::Preference => ind.preference(),
    }
}

/// Share of structurally distinct trees. Structural equality of the prefix
/// node sequence coincides with equality of canonical strings.
pub fn unique_fraction(pop: &[Individual], which: Chromosome) -> f64 {
    unique_tree_fraction(pop.iter().map(|i| chromosome(i, which)))
}

pub fn unique_tree_fraction<'a>(trees: impl IntoIterator<Item = &'a ExprTree>) -> f64 {
    let mut seen = HashSet::new();
    let mut n = 0usize;
    for t in trees {
        seen.insert(t.nodes());
        n += 1;
    }
    assert!(n > 0, "unique fraction of an empty population");
    seen.len() as f64 / n as f64
}

pub fn mean_depth(pop: &[Individual], which: Chromosome) -> f64 {
    assert!(!pop.is_empty(), "mean depth of an empty population");
    let total: usize = pop
        .iter()
        .map(|i| match which {
            Chromosome::Solution => i.solution_depth(),
            Chromosome::Preference => i.preference_depth(),
        })
        .sum();
    total as f64 / pop.len() as f64
}

/// An offspring improves when it beats the previous generation's best outright.
pub fn record_improvement(
    offspring_fitness: f64,
    previous_best: f64,
    best_ever: f64,
    chooser_preference_depth: usize,
) -> Option<ImprovementEvent> {
    (offspring_fitness < previous_best).then_some(ImprovementEvent {
        preference_depth: chooser_preference_depth,
        is_best_ever: offspring_fitness < best_ever,
    })
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Population standard deviation (n denominator).
pub fn population_sd(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Termination values of one run, as stored in its metadata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub generations: usize,
    pub final_best_fitness: f64,
    pub best_ever_fitness: f64,
    pub unique_solution_fraction: f64,
    pub unique_preference_fraction: f64,
    pub mean_solution_depth: f64,
    pub mean_preference_depth: f64,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    FinalBestFitness,
    UniqueSolutionFraction,
    UniquePreferenceFraction,
    MeanSolutionDepth,
    MeanPreferenceDepth,
    WallClockSeconds,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::FinalBestFitness,
        Metric::UniqueSolutionFraction,
        Metric::UniquePreferenceFraction,
        Metric::MeanSolutionDepth,
        Metric::MeanPreferenceDepth,
        Metric::WallClockSeconds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::FinalBestFitness => "final_best_fitness",
            Metric::UniqueSolutionFraction => "unique_solution_fraction",
            Metric::UniquePreferenceFraction => "unique_preference_fraction",
            Metric::MeanSolutionDepth => "mean_solution_depth",
            Metric::MeanPreferenceDepth => "mean_preference_depth",
            Metric::WallClockSeconds => "wall_clock_seconds",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        let s = s.replace('-', "_");
        match s.as_str() {
            "mbf" | "fitness" => Some(Metric::FinalBestFitness),
            "unique" => Some(Metric::UniqueSolutionFraction),
            "depth" => Some(Metric::MeanSolutionDepth),
            _ => Metric::ALL.into_iter().find(|m| m.name() == s),
        }
    }

    /// Whether smaller values are better when ranking two batches.
    pub fn lower_is_better(self) -> bool {
        !matches!(self, Metric::UniqueSolutionFraction | Metric::UniquePreferenceFraction)
    }

    pub fn of(self, s: &RunSummary) -> f64 {
        match self {
            Metric::FinalBestFitness => s.final_best_fitness,
            Metric::UniqueSolutionFraction => s.unique_solution_fraction,
            Metric::UniquePreferenceFraction => s.unique_preference_fraction,
            Metric::MeanSolutionDepth => s.mean_solution_depth,
            Metric::MeanPreferenceDepth => s.mean_preference_depth,
            Metric::WallClockSeconds => s.wall_clock_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub generations: usize,
    pub metrics: Vec<MetricSummary>,
}

impl BatchSummary {
    pub fn metric(&self, m: Metric) -> &MetricSummary {
        self.metrics.iter().find(|s| s.metric == m).expect("every metric is summarized")
    }

    /// Mean best fitness across runs.
    pub fn mbf(&self) -> f64 {
        self.metric(Metric::FinalBestFitness).mean
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "metric,n,mean,sd,median,min,max")?;
        for m in &self.metrics {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                m.metric.name(),
                m.n,
                fmt_sig6(m.mean),
                fmt_sig6(m.sd),
                fmt_sig6(m.median),
                fmt_sig6(m.min),
                fmt_sig6(m.max)
            )?;
        }
        Ok(())
    }
}

/// Mean and sample sd at termination for every metric.
pub fn aggregate_batch(runs: &[RunSummary]) -> Result<BatchSummary, TelemetryError> {
    let first = runs.first().ok_or(TelemetryError::EmptyBatch)?;
    if let Some(bad) = runs.iter().find(|r| r.generations != first.generations) {
        return Err(TelemetryError::GenerationMismatch {
            expected: first.generations,
            found: bad.generations,
            seed: bad.seed,
        });
    }
    let metrics = Metric::ALL
        .into_iter()
        .map(|metric| {
            let values: Vec<f64> = runs.iter().map(|r| metric.of(r)).collect();
            MetricSummary {
                metric,
                n: values.len(),
                mean: mean(&values),
                sd: sample_sd(&values),
                median: median(&values),
                min: values.iter().copied().fold(f64::INFINITY, f64::min),
                max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    Ok(BatchSummary { runs: runs.len(), generations: first.generations, metrics })
}

/// Renders a float with six significant digits.
pub fn fmt_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.5e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Operator;

    fn summary(seed: u64, best: f64, gens: usize) -> RunSummary {
        RunSummary {
            seed,
            generations: gens,
            final_best_fitness: best,
            best_ever_fitness: best,
            unique_solution_fraction: 0.5,
            unique_preference_fraction: 0.5,
            mean_solution_depth: 3.0,
            mean_preference_depth: 1.0,
            wall_clock_seconds: 1.0,
        }
    }

    #[test]
    fn unique_examples() {
        let a = ExprTree::var(0);
        let b = ExprTree::unary(Operator::Sin, ExprTree::var(0));
        let c = ExprTree::unary(Operator::Cos, ExprTree::var(0));
        assert_eq!(unique_tree_fraction([&a, &a, &b, &c]), 0.75);
        assert_eq!(unique_tree_fraction([&a, &a, &a, &a]), 0.25);
        assert_eq!(unique_tree_fraction([&a, &b, &c]), 1.0);
        assert_eq!(unique_tree_fraction([&c, &a, &b, &a]), 0.75);
    }

    #[test]
    fn improvement_examples() {
        assert_eq!(record_improvement(0.5, 0.5, 0.3, 2), None);
        assert_eq!(
            record_improvement(0.4, 0.5, 0.3, 2),
            Some(ImprovementEvent { preference_depth: 2, is_best_ever: false })
        );
        assert_eq!(
            record_improvement(0.2, 0.5, 0.3, 0),
            Some(ImprovementEvent { preference_depth: 0, is_best_ever: true })
        );
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate_batch(&[summary(0, 0.25, 10)]).unwrap();
        assert_eq!(one.mbf(), 0.25);
        let two = aggregate_batch(&[summary(0, 1.0, 10), summary(1, 3.0, 10)]).unwrap();
        assert_eq!(two.mbf(), 2.0);
        assert!((two.metric(Metric::FinalBestFitness).sd - 2f64.sqrt()).abs() < 1e-15);
        let mut csv = Vec::new();
        two.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 1 + Metric::ALL.len());
        assert!(text.contains("final_best_fitness,2,2,1.41421,2,1,3"));
        assert!(matches!(
            aggregate_batch(&[summary(0, 1.0, 10), summary(1, 1.0, 11)]),
            Err(TelemetryError::GenerationMismatch { seed: 1, .. })
        ));
        assert!(matches!(aggregate_batch(&[]), Err(TelemetryError::EmptyBatch)));
    }

    #[test]
    fn sd_conventions() {
        assert_eq!(population_sd(&[1.0, 3.0]), 1.0);
        assert!((sample_sd(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(14.25), "14.25");
        assert_eq!(fmt_sig6(0.123456789), "0.123457");
        assert_eq!(fmt_sig6(3.7e-4), "0.00037");
        assert_eq!(fmt_sig6(1.23456789e-7), "1.23457e-7");
        assert_eq!(fmt_sig6(123456789.0), "1.23457e8");
    }
}
