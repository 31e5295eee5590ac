//! Genetic programming for symbolic regression with evolvable mating preferences.
//!
//! Each [`engine::Individual`] carries a solution tree, scored by mean squared
//! error against the fitness cases, and a preference tree describing the mate
//! it would like. Under [`selection::SelectionStrategy::Pimp`] the first parent
//! wins a fitness tournament and then picks, from a few random candidates, the
//! one whose outputs sit closest to its preference's outputs. A plain
//! two-tournament baseline is available for comparison.

/// Version of this library, recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod analysis;
pub mod engine;
pub mod expr;
pub mod problems;
pub mod selection;
pub mod telemetry;
pub mod variation;

pub use engine::{run, Evolution, Individual, RunConfig, RunResult};
pub use expr::{ExprTree, FunctionSet, Operator, Terminal};
pub use problems::{FitnessCases, Problem, ProblemId};
pub use selection::SelectionStrategy;
pub use variation::MutationStrategy;
