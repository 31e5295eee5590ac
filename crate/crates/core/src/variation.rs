//! Subtree crossover, the mutation operators and the staged hybrid schedule.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ramped_tree, ExprTree, FunctionSet, Node};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VariationError {
    #[error("mutation: subtree grow bounds {min}..{max} are inverted")]
    GrowBounds { min: usize, max: usize },
    #[error("mutation: per-node probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("mutation: hybrid schedule {0}")]
    Schedule(String),
    #[error("mutation: generation {gen} is not covered by the hybrid schedule")]
    Uncovered { gen: usize },
}

/// A contiguous generation interval `[start, end)` of a hybrid schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridPhase {
    pub start: usize,
    pub end: usize,
    pub mutation: MutationStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MutationStrategy {
    Subtree { grow_min: usize, grow_max: usize },
    NodeReplacement { per_node_prob: f64 },
    None,
    Hybrid { phases: Vec<HybridPhase> },
}

impl MutationStrategy {
    pub const DEFAULT_NODE_PROB: f64 = 0.05;

    pub fn subtree() -> Self {
        MutationStrategy::Subtree { grow_min: 2, grow_max: 7 }
    }

    pub fn node_replacement() -> Self {
        MutationStrategy::NodeReplacement { per_node_prob: Self::DEFAULT_NODE_PROB }
    }

    /// Subtree 2/6, 2/4, 2/2 for 200 generations each, node replacement afterwards.
    pub fn staged_hybrid(total_generations: usize) -> Self {
        let sub = |max| MutationStrategy::Subtree { grow_min: 2, grow_max: max };
        MutationStrategy::Hybrid {
            phases: vec![
                HybridPhase { start: 0, end: 200, mutation: sub(6) },
                HybridPhase { start: 200, end: 400, mutation: sub(4) },
                HybridPhase { start: 400, end: 600, mutation: sub(2) },
                HybridPhase {
                    start: 600,
                    end: total_generations,
                    mutation: MutationStrategy::node_replacement(),
                },
            ],
        }
    }

    /// Short name used in artifact file names.
    pub fn label(&self) -> &'static str {
        match self {
            MutationStrategy::Subtree { .. } => "subtree",
            MutationStrategy::NodeReplacement { .. } => "node-replacement",
            MutationStrategy::None => "none",
            MutationStrategy::Hybrid { .. } => "hybrid",
        }
    }

    pub fn validate(&self, total_generations: usize) -> Result<(), VariationError> {
        match self {
            MutationStrategy::Subtree { grow_min, grow_max } if grow_min > grow_max => {
                Err(VariationError::GrowBounds { min: *grow_min, max: *grow_max })
            }
            MutationStrategy::NodeReplacement { per_node_prob }
                if !(0.0..=1.0).contains(per_node_prob) =>
            {
                Err(VariationError::Probability(*per_node_prob))
            }
            MutationStrategy::Hybrid { phases } => {
                if phases.is_empty() {
                    return Err(VariationError::Schedule("has no phases".into()));
                }
                let mut expected = 0;
                for p in phases {
                    if p.start != expected {
                        return Err(VariationError::Schedule(format!(
                            "phase starting at {} leaves a gap or overlap at {expected}",
                            p.start
                        )));
                    }
                    if p.end <= p.start {
                        return Err(VariationError::Schedule(format!(
                            "phase [{}, {}) is empty",
                            p.start, p.end
                        )));
                    }
                    if matches!(p.mutation, MutationStrategy::Hybrid { .. }) {
                        return Err(VariationError::Schedule("phases cannot nest".into()));
                    }
                    p.mutation.validate(total_generations)?;
                    expected = p.end;
                }
                if expected != total_generations {
                    return Err(VariationError::Schedule(format!(
                        "ends at {expected} but the run has {total_generations} generations"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// The non-hybrid strategy in force at `gen`.
    pub fn strategy_for_generation(&self, gen: usize) -> Result<&MutationStrategy, VariationError> {
        match self {
            MutationStrategy::Hybrid { phases } => phases
                .iter()
                .find(|p| (p.start..p.end).contains(&gen))
                .map(|p| &p.mutation)
                .ok_or(VariationError::Uncovered { gen }),
            other => Ok(other),
        }
    }

    /// Generations at which a hybrid schedule switches phase.
    pub fn switch_points(&self) -> Vec<usize> {
        match self {
            MutationStrategy::Hybrid { phases } => phases.iter().skip(1).map(|p| p.start).collect(),
            _ => Vec::new(),
        }
    }

    /// Applies a (non-hybrid) strategy once.
    pub fn apply<R: Rng + ?Sized>(&self, tree: &ExprTree, fs: &FunctionSet, rng: &mut R) -> ExprTree {
        match self {
            MutationStrategy::Subtree { grow_min, grow_max } => {
                subtree_mutation(tree, *grow_min, *grow_max, fs, rng)
            }
            MutationStrategy::NodeReplacement { per_node_prob } => {
                node_replacement(tree, *per_node_prob, fs, rng)
            }
            MutationStrategy::None => tree.clone(),
            MutationStrategy::Hybrid { .. } => {
                panic!("resolve a hybrid schedule with strategy_for_generation first")
            }
        }
    }
}

impl fmt::Display for MutationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MutationStrategy::Subtree { grow_min, grow_max } => write!(f, "subtree({grow_min},{grow_max})"),
            MutationStrategy::NodeReplacement { per_node_prob } => write!(f, "node-replacement({per_node_prob})"),
            MutationStrategy::None => f.write_str("none"),
            MutationStrategy::Hybrid { phases } => {
                f.write_str("hybrid[")?;
                for (i, p) in phases.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}-{}: {}", p.start, p.end, p.mutation)?;
                }
                f.write_str("]")
            }
        }
    }
}

/// Swaps the subtrees rooted at `i` in `a` and `j` in `b`.
pub fn crossover_at(a: &ExprTree, i: usize, b: &ExprTree, j: usize) -> (ExprTree, ExprTree) {
    let from_a = &a.nodes()[a.subtree(i)];
    let from_b = &b.nodes()[b.subtree(j)];
    (a.replace_subtree(i, from_b), b.replace_subtree(j, from_a))
}

/// One-point subtree crossover with crossover points uniform over all nodes.
pub fn subtree_crossover<R: Rng + ?Sized>(a: &ExprTree, b: &ExprTree, rng: &mut R) -> (ExprTree, ExprTree) {
    let i = rng.gen_range(0..a.len());
    let j = rng.gen_range(0..b.len());
    crossover_at(a, i, b, j)
}

/// Replaces a uniformly chosen subtree with a fresh ramped half-and-half tree.
pub fn subtree_mutation<R: Rng + ?Sized>(
    tree: &ExprTree,
    grow_min: usize,
    grow_max: usize,
    fs: &FunctionSet,
    rng: &mut R,
) -> ExprTree {
    let at = rng.gen_range(0..tree.len());
    let fresh = ramped_tree(grow_min, grow_max, fs, rng);
    tree.replace_subtree(at, fresh.nodes())
}

/// Redraws each node with probability `per_node_prob` from same-arity substitutes.
pub fn node_replacement<R: Rng + ?Sized>(
    tree: &ExprTree,
    per_node_prob: f64,
    fs: &FunctionSet,
    rng: &mut R,
) -> ExprTree {
    let mut out = tree.clone();
    for node in out.nodes_mut() {
        if !rng.gen_bool(per_node_prob) {
            continue;
        }
        *node = match *node {
            Node::Op(op) => Node::Op(fs.random_operator_with_arity(op.arity(), rng).unwrap_or(op)),
            Node::Leaf(_) => Node::Leaf(fs.random_terminal(rng)),
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{ramped_half_and_half, InitMethod, Operator::*};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn crossover_single_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (c1, c2) = subtree_crossover(&ExprTree::var(0), &ExprTree::var(0), &mut rng);
        assert_eq!(c1, ExprTree::var(0));
        assert_eq!(c2, ExprTree::var(0));
    }

    #[test]
    fn crossover_root_swap() {
        let a = ExprTree::binary(Add, ExprTree::var(0), ExprTree::var(0));
        let b = ExprTree::unary(Sin, ExprTree::var(0));
        let (c1, c2) = crossover_at(&a, 0, &b, 0);
        assert_eq!((c1, c2), (b.clone(), a.clone()));
        let (c1, c2) = crossover_at(&a, 2, &b, 1);
        assert_eq!(c1.canonical_string(), "(add x0 x0)");
        assert_eq!(c2.canonical_string(), "(sin x0)");
        let (c1, _) = crossover_at(&a, 1, &b, 0);
        assert_eq!(c1.canonical_string(), "(add (sin x0) x0)");
    }

    #[test]
    fn crossover_conserves_nodes() {
        let fs = FunctionSet::standard(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trees = ramped_half_and_half(200, 0, 7, &fs, &mut rng);
        for pair in trees.chunks(2) {
            let (c1, c2) = subtree_crossover(&pair[0], &pair[1], &mut rng);
            assert_eq!(c1.len() + c2.len(), pair[0].len() + pair[1].len());
            c1.validate(&fs).unwrap();
            c2.validate(&fs).unwrap();
        }
    }

    #[test]
    fn subtree_mutation_of_leaf() {
        let fs = FunctionSet::standard(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut total = 0usize;
        for _ in 0..10_000 {
            let m = subtree_mutation(&ExprTree::var(0), 2, 7, &fs, &mut rng);
            assert!(m.depth() <= 7);
            m.validate(&fs).unwrap();
            total += m.depth();
        }
        assert!(total as f64 / 10_000.0 > 1.0);
    }

    #[test]
    fn subtree_mutation_full_depth_two() {
        // With grow bounds 2/2 and the Full branch, a leaf becomes a depth-2 tree.
        let fs = FunctionSet::standard(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let full = ExprTree::random(InitMethod::Full, 2, &fs, &mut rng);
        assert_eq!(full.depth(), 2);
        let mut saw_two = false;
        for _ in 0..200 {
            let m = subtree_mutation(&ExprTree::var(0), 2, 2, &fs, &mut rng);
            assert!(m.depth() <= 2);
            saw_two |= m.depth() == 2;
        }
        assert!(saw_two);
    }

    #[test]
    fn node_replacement_zero_prob_is_identity() {
        let fs = FunctionSet::standard(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for t in ramped_half_and_half(100, 0, 6, &fs, &mut rng) {
            assert_eq!(node_replacement(&t, 0.0, &fs, &mut rng), t);
            let r = node_replacement(&t, 0.5, &fs, &mut rng);
            assert_eq!((r.depth(), r.len()), (t.depth(), t.len()));
        }
    }

    #[test]
    fn node_replacement_root_uniform() {
        // Chi-square goodness of fit over the four binary operators.
        let fs = FunctionSet { operators: vec![Add, Sub, Mul, ProtectedDiv], variable_count: 1, constant_range: None };
        let t = ExprTree::binary(Add, ExprTree::var(0), ExprTree::var(0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            let r = node_replacement(&t, 1.0, &fs, &mut rng);
            let Node::Op(op) = r.root() else { panic!("root became a leaf") };
            counts[fs.operators.iter().position(|o| *o == op).unwrap()] += 1;
        }
        let e = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|c| (*c as f64 - e).powi(2) / e).sum();
        // 3 degrees of freedom, alpha = 0.001
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn hybrid_schedule_lookup() {
        let h = MutationStrategy::staged_hybrid(1500);
        h.validate(1500).unwrap();
        assert_eq!(h.strategy_for_generation(100).unwrap(), &MutationStrategy::Subtree { grow_min: 2, grow_max: 6 });
        assert_eq!(h.strategy_for_generation(599).unwrap(), &MutationStrategy::Subtree { grow_min: 2, grow_max: 2 });
        assert_eq!(h.strategy_for_generation(600).unwrap(), &MutationStrategy::node_replacement());
        assert_eq!(h.strategy_for_generation(1500), Err(VariationError::Uncovered { gen: 1500 }));
        assert_eq!(h.switch_points(), vec![200, 400, 600]);
    }

    #[test]
    fn hybrid_validation() {
        assert!(MutationStrategy::staged_hybrid(1500).validate(1000).is_err());
        let gap = MutationStrategy::Hybrid {
            phases: vec![
                HybridPhase { start: 0, end: 10, mutation: MutationStrategy::None },
                HybridPhase { start: 11, end: 20, mutation: MutationStrategy::None },
            ],
        };
        assert!(matches!(gap.validate(20), Err(VariationError::Schedule(_))));
        assert!(MutationStrategy::Subtree { grow_min: 3, grow_max: 2 }.validate(10).is_err());
        assert!(MutationStrategy::NodeReplacement { per_node_prob: 1.5 }.validate(10).is_err());
    }
}
