//! Paired nonparametric statistics for shared-seed batch comparisons.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::telemetry::{fmt_sig6, mean, sample_sd, Metric, RunSummary};

pub const ALPHA: f64 = 0.05;
/// Largest number of non-zero differences for which the exact null is used.
pub const EXACT_MAX_N: usize = 25;
/// Fewest non-zero differences for which a significance flag may be raised.
pub const MIN_PAIRS_FOR_SIGNIFICANCE: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("all paired differences are zero; no signed-rank test possible")]
    Degenerate,
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {group} has {size} value(s); need at least 2")]
    GroupTooSmall { group: usize, size: usize },
    #[error("group {group} has zero variance")]
    ZeroVariance { group: usize },
    #[error("seed sets differ: {}", describe_missing(missing_in_a, missing_in_b))]
    Pairing { missing_in_a: Vec<u64>, missing_in_b: Vec<u64> },
    #[error("duplicate seed {0} in batch")]
    DuplicateSeed(u64),
}

fn describe_missing(in_a: &[u64], in_b: &[u64]) -> String {
    let list = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(", ");
    match (in_a.is_empty(), in_b.is_empty()) {
        (false, false) => format!("seed(s) {} missing from a; seed(s) {} missing from b", list(in_a), list(in_b)),
        (false, true) => format!("seed(s) {} missing from a", list(in_a)),
        _ => format!("seed(s) {} missing from b", list(in_b)),
    }
}

/// Values paired by shared seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub labels: (String, String),
    pub values: Vec<(f64, f64)>,
}

impl PairedSample {
    pub fn new(a: &str, b: &str, values: Vec<(f64, f64)>) -> Self {
        PairedSample { labels: (a.to_string(), b.to_string()), values }
    }

    pub fn swapped(&self) -> Self {
        PairedSample {
            labels: (self.labels.1.clone(), self.labels.0.clone()),
            values: self.values.iter().map(|(a, b)| (*b, *a)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Number of non-zero differences.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
    pub significant: bool,
}

/// Average ranks (1-based) of `values`, ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test on `a - b`.
///
/// Zero differences are dropped; tied magnitudes get average ranks. The exact
/// null distribution (which accounts for the tie pattern) is used up to
/// [`EXACT_MAX_N`] differences, the tie- and continuity-corrected normal
/// approximation above that.
pub fn wilcoxon_signed_rank(sample: &PairedSample) -> Result<WilcoxonResult, AnalysisError> {
    let diffs: Vec<f64> = sample.values.iter().map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Err(AnalysisError::Degenerate);
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);

    let (p_value, exact) = if n <= EXACT_MAX_N {
        (exact_p_value(&ranks, statistic), true)
    } else {
        (normal_p_value(&magnitudes, w_plus, n), false)
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        statistic,
        p_value,
        exact,
        significant: n >= MIN_PAIRS_FOR_SIGNIFICANCE && p_value < ALPHA,
    })
}

/// `min(1, 2 P(W+ <= statistic))` under the permutation null for these ranks.
fn exact_p_value(ranks: &[f64], statistic: f64) -> f64 {
    // Doubled ranks are integers even with ties (averages of integers are halves).
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max_sum + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let threshold = (2.0 * statistic).round() as usize;
    let below: f64 = counts[..=threshold.min(max_sum)].iter().sum();
    let all = 2f64.powi(ranks.len() as i32);
    (2.0 * below / all).min(1.0)
}

fn normal_p_value(magnitudes: &[f64], w_plus: f64, n: usize) -> f64 {
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let mut sorted = magnitudes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mu).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BartlettResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Bartlett's test for equal variances, chi-square on `k - 1` degrees of freedom.
pub fn bartlett(groups: &[Vec<f64>]) -> Result<BartlettResult, AnalysisError> {
    let k = groups.len();
    if k < 2 {
        return Err(AnalysisError::TooFewGroups(k));
    }
    let mut variances = Vec::with_capacity(k);
    for (g, values) in groups.iter().enumerate() {
        if values.len() < 2 {
            return Err(AnalysisError::GroupTooSmall { group: g, size: values.len() });
        }
        let s = sample_sd(values);
        if s == 0.0 {
            return Err(AnalysisError::ZeroVariance { group: g });
        }
        variances.push(s * s);
    }
    let dof: Vec<f64> = groups.iter().map(|g| g.len() as f64 - 1.0).collect();
    let total_dof: f64 = dof.iter().sum();
    let pooled = dof.iter().zip(&variances).map(|(d, v)| d * v).sum::<f64>() / total_dof;
    let numerator =
        total_dof * pooled.ln() - dof.iter().zip(&variances).map(|(d, v)| d * v.ln()).sum::<f64>();
    let correction = 1.0
        + (dof.iter().map(|d| 1.0 / d).sum::<f64>() - 1.0 / total_dof) / (3.0 * (k as f64 - 1.0));
    let statistic = (numerator / correction).max(0.0);
    let chi = ChiSquared::new((k - 1) as f64).expect("positive degrees of freedom");
    Ok(BartlettResult { statistic, df: k - 1, p_value: chi.sf(statistic) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    A,
    B,
    None,
}

impl Winner {
    pub fn name(self) -> &'static str {
        match self {
            Winner::A => "a",
            Winner::B => "b",
            Winner::None => "none",
        }
    }
}

/// One row of a comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: Metric,
    pub mean_a: f64,
    pub sd_a: f64,
    pub mean_b: f64,
    pub sd_b: f64,
    pub winner: Winner,
    /// `None` when every paired difference is zero.
    pub p_value: Option<f64>,
    pub significant: bool,
}

fn by_seed(batch: &[RunSummary]) -> Result<BTreeMap<u64, &RunSummary>, AnalysisError> {
    let mut map = BTreeMap::new();
    for r in batch {
        if map.insert(r.seed, r).is_some() {
            return Err(AnalysisError::DuplicateSeed(r.seed));
        }
    }
    Ok(map)
}

/// Compares one metric across two shared-seed batches.
pub fn compare(
    batch_a: &[RunSummary],
    batch_b: &[RunSummary],
    metric: Metric,
) -> Result<ComparisonRow, AnalysisError> {
    let a = by_seed(batch_a)?;
    let b = by_seed(batch_b)?;
    let missing_in_a: Vec<u64> = b.keys().filter(|s| !a.contains_key(s)).copied().collect();
    let missing_in_b: Vec<u64> = a.keys().filter(|s| !b.contains_key(s)).copied().collect();
    if !missing_in_a.is_empty() || !missing_in_b.is_empty() {
        return Err(AnalysisError::Pairing { missing_in_a, missing_in_b });
    }
    let pairs: Vec<(f64, f64)> = a.iter().map(|(s, ra)| (metric.of(ra), metric.of(b[s]))).collect();
    let va: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let vb: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (mean_a, mean_b) = (mean(&va), mean(&vb));
    let winner = if mean_a == mean_b {
        Winner::None
    } else if (mean_a < mean_b) == metric.lower_is_better() {
        Winner::A
    } else {
        Winner::B
    };
    let (p_value, significant) = match wilcoxon_signed_rank(&PairedSample::new("a", "b", pairs)) {
        Ok(w) => (Some(w.p_value), w.significant),
        Err(AnalysisError::Degenerate) => (None, false),
        Err(e) => return Err(e),
    };
    Ok(ComparisonRow {
        metric,
        mean_a,
        sd_a: sample_sd(&va),
        mean_b,
        sd_b: sample_sd(&vb),
        winner,
        p_value,
        significant,
    })
}

/// CSV with columns `metric,mean_a,sd_a,mean_b,sd_b,winner,p_value,significant`.
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], mut out: W) -> io::Result<()> {
    writeln!(out, "metric,mean_a,sd_a,mean_b,sd_b,winner,p_value,significant")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.metric.name(),
            fmt_sig6(r.mean_a),
            fmt_sig6(r.sd_a),
            fmt_sig6(r.mean_b),
            fmt_sig6(r.sd_b),
            r.winner.name(),
            r.p_value.map(fmt_sig6).unwrap_or_else(|| "NA".into()),
            r.significant
        )?;
    }
    Ok(())
}
