//! Benchmark objectives, fitness-case generation and dataset ingestion.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::FunctionSet;

/// Number of rows in the Diabetes dataset.
pub const DIABETES_ROWS: usize = 442;
/// Number of feature columns in the Diabetes dataset.
pub const DIABETES_FEATURES: usize = 10;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: no data rows")]
    Empty { path: PathBuf },
    #[error("{path}: row {row} has {found} columns, expected {expected}")]
    ColumnCount { path: PathBuf, row: usize, found: usize, expected: usize },
    #[error("{path}: row {row}, column {column}: `{value}` is not a finite number")]
    NonNumeric { path: PathBuf, row: usize, column: usize, value: String },
    #[error("{path}: {found} data rows, expected {expected}")]
    RowCount { path: PathBuf, found: usize, expected: usize },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("invalid fitness cases: {0}")]
    InvalidCases(String),
    #[error("unknown problem `{0}` (expected koza1, nguyen6, pagie1 or diabetes)")]
    UnknownProblem(String),
}

/// Inputs (stored column-major) and targets for MSE scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessCases {
    columns: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl FitnessCases {
    pub fn from_rows(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self, ProblemError> {
        if rows.is_empty() || rows.len() != targets.len() {
            return Err(ProblemError::InvalidCases(format!(
                "{} input rows vs {} targets",
                rows.len(),
                targets.len()
            )));
        }
        let arity = rows[0].len();
        if arity == 0 {
            return Err(ProblemError::InvalidCases("zero input columns".into()));
        }
        let mut columns = vec![Vec::with_capacity(rows.len()); arity];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != arity {
                return Err(ProblemError::InvalidCases(format!(
                    "row {r} has {} values, expected {arity}",
                    row.len()
                )));
            }
            for (c, v) in row.iter().enumerate() {
                columns[c].push(*v);
            }
        }
        let cases = FitnessCases { columns, targets };
        cases.check_finite()?;
        Ok(cases)
    }

    fn check_finite(&self) -> Result<(), ProblemError> {
        let all = self.columns.iter().flatten().chain(&self.targets);
        if all.into_iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(ProblemError::InvalidCases("non-finite value".into()))
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Rescales targets into [0, 1]. Constant targets map to 0.
    pub fn normalize_targets_min_max(&mut self) {
        let lo = self.targets.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for t in &mut self.targets {
            *t = if span > 0.0 { (*t - lo) / span } else { 0.0 };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemId {
    Koza1,
    Nguyen6,
    Pagie1,
    Diabetes,
}

impl ProblemId {
    pub const BENCHMARKS: [ProblemId; 3] = [ProblemId::Koza1, ProblemId::Nguyen6, ProblemId::Pagie1];

    pub fn name(self) -> &'static str {
        match self {
            ProblemId::Koza1 => "koza1",
            ProblemId::Nguyen6 => "nguyen6",
            ProblemId::Pagie1 => "pagie1",
            ProblemId::Diabetes => "diabetes",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            ProblemId::Koza1 | ProblemId::Nguyen6 => 1,
            ProblemId::Pagie1 => 2,
            ProblemId::Diabetes => DIABETES_FEATURES,
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemId {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "koza1" => Ok(ProblemId::Koza1),
            "nguyen6" => Ok(ProblemId::Nguyen6),
            "pagie1" => Ok(ProblemId::Pagie1),
            "diabetes" => Ok(ProblemId::Diabetes),
            _ => Err(ProblemError::UnknownProblem(s.to_string())),
        }
    }
}

/// Closed-form target value. Returns `None` for the dataset problem or a wrong input length.
pub fn objective(id: ProblemId, inputs: &[f64]) -> Option<f64> {
    if inputs.len() != id.arity() {
        return None;
    }
    match id {
        ProblemId::Koza1 => {
            let x = inputs[0];
            Some(x.powi(4) + x.powi(3) + x.powi(2) + x)
        }
        ProblemId::Nguyen6 => {
            let x = inputs[0];
            Some(x.sin() + (x + x * x).sin())
        }
        ProblemId::Pagie1 => Some(pagie_term(inputs[0]) + pagie_term(inputs[1])),
        ProblemId::Diabetes => None,
    }
}

/// `1 / (1 + v^-4)`, continuously extended to 0 at v = 0.
fn pagie_term(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        1.0 / (1.0 + v.powi(-4))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CaseSource {
    /// `n` points, each coordinate uniform in `[low, high]`.
    SampledUniform { n: usize, low: f64, high: f64 },
    /// Cartesian grid `low, low+step, ..., high` in every variable.
    Grid { low: f64, high: f64, step: f64 },
    /// CSV file with feature columns followed by the target column.
    Dataset { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: ProblemId,
    pub function_set: FunctionSet,
    pub case_source: CaseSource,
}

impl Problem {
    pub fn preset(id: ProblemId) -> Self {
        let case_source = match id {
            ProblemId::Koza1 | ProblemId::Nguyen6 => {
                CaseSource::SampledUniform { n: 20, low: -1.0, high: 1.0 }
            }
            ProblemId::Pagie1 => CaseSource::Grid { low: -5.0, high: 5.0, step: 0.4 },
            ProblemId::Diabetes => CaseSource::Dataset { path: PathBuf::from("data/diabetes.csv") },
        };
        let function_set = match id {
            ProblemId::Diabetes => FunctionSet::extended(id.arity()),
            _ => FunctionSet::standard(id.arity()),
        };
        Problem { id, function_set, case_source }
    }

    pub fn arity(&self) -> usize {
        self.id.arity()
    }

    /// Builds the fitness cases for one run. Sampled problems draw from `rng`.
    pub fn make_cases<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<FitnessCases, ProblemError> {
        let arity = self.arity();
        let rows: Vec<Vec<f64>> = match &self.case_source {
            CaseSource::SampledUniform { n, low, high } => (0..*n)
                .map(|_| (0..arity).map(|_| rng.gen_range(*low..=*high)).collect())
                .collect(),
            CaseSource::Grid { low, high, step } => {
                let axis = grid_axis(*low, *high, *step);
                let mut rows = vec![Vec::with_capacity(arity)];
                for _ in 0..arity {
                    rows = rows
                        .into_iter()
                        .flat_map(|prefix| {
                            axis.iter().map(move |v| {
                                let mut r = prefix.clone();
                                r.push(*v);
                                r
                            })
                        })
                        .collect();
                }
                rows
            }
            CaseSource::Dataset { path } => {
                let mut cases = load_diabetes(path)?;
                cases.normalize_targets_min_max();
                return Ok(cases);
            }
        };
        let targets = rows
            .iter()
            .map(|r| objective(self.id, r).expect("closed-form objective"))
            .collect();
        FitnessCases::from_rows(rows, targets)
    }
}

/// Points `low + k*step` for every k that stays within `high` (half a step of slack).
pub fn grid_axis(low: f64, high: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0 && high >= low, "bad grid [{low}, {high}] step {step}");
    let count = ((high - low) / step + 0.5).floor() as usize + 1;
    (0..count).map(|k| low + k as f64 * step).collect()
}

/// Reads the 442-row Diabetes CSV: ten feature columns then the target, optional header.
pub fn load_diabetes(path: impl AsRef<Path>) -> Result<FitnessCases, ProblemError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ProblemError::Io { path: path.to_path_buf(), source })?;
    let expected_cols = DIABETES_FEATURES + 1;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|source| ProblemError::Csv { path: path.to_path_buf(), source })?;
        let row_no = line + 1;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != expected_cols {
            return Err(ProblemError::ColumnCount {
                path: path.to_path_buf(),
                row: row_no,
                found: record.len(),
                expected: expected_cols,
            });
        }
        let parsed: Vec<Option<f64>> = record
            .iter()
            .map(|cell| cell.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        if line == 0 && parsed.iter().all(Option::is_none) {
            // header line
            continue;
        }
        let mut values = Vec::with_capacity(expected_cols);
        for (col, (cell, v)) in record.iter().zip(parsed).enumerate() {
            match v {
                Some(v) => values.push(v),
                None => {
                    return Err(ProblemError::NonNumeric {
                        path: path.to_path_buf(),
                        row: row_no,
                        column: col + 1,
                        value: cell.to_string(),
                    })
                }
            }
        }
        targets.push(values.pop().expect("target column"));
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(ProblemError::Empty { path: path.to_path_buf() });
    }
    if rows.len() != DIABETES_ROWS {
        return Err(ProblemError::RowCount {
            path: path.to_path_buf(),
            found: rows.len(),
            expected: DIABETES_ROWS,
        });
    }
    FitnessCases::from_rows(rows, targets)
}
