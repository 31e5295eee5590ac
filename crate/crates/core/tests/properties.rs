//! Property tests for trees, variation operators, selection and statistics.
//! Each property is checked against an independent oracle written here.

use pimp_gp::analysis::{bartlett, wilcoxon_signed_rank, AnalysisError, PairedSample, EXACT_MAX_N};
use pimp_gp::engine::{enforce_depth_limit, Individual};
use pimp_gp::expr::{Evaluator, InitMethod, Node, Terminal};
use pimp_gp::selection::{pimp_select_pair, tournament, RoleRecord};
use pimp_gp::variation::{crossover_at, node_replacement, subtree_crossover, subtree_mutation};
use pimp_gp::{ExprTree, FitnessCases, FunctionSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn function_set(extended: bool, vars: usize) -> FunctionSet {
    if extended {
        FunctionSet::extended(vars)
    } else {
        FunctionSet::standard(vars)
    }
}

fn random_tree(rng: &mut ChaCha8Rng, fs: &FunctionSet, max_depth: usize) -> ExprTree {
    let method = if rng.gen_bool(0.5) { InitMethod::Full } else { InitMethod::Grow };
    let depth = rng.gen_range(0..=max_depth);
    ExprTree::random(method, depth, fs, rng)
}

/// Recursive depth and size, independent of the library's stack scan.
fn oracle_shape(nodes: &[Node], at: usize) -> (usize, usize, usize) {
    // returns (depth, size, next index)
    let arity = nodes[at].arity();
    let mut next = at + 1;
    let mut depth = 0;
    let mut size = 1;
    for _ in 0..arity {
        let (d, s, n) = oracle_shape(nodes, next);
        depth = depth.max(d + 1);
        size += s;
        next = n;
    }
    (depth, size, next)
}

fn arities(t: &ExprTree) -> Vec<usize> {
    t.nodes().iter().map(|n| n.arity()).collect()
}

fn cases_for(rng: &mut ChaCha8Rng, vars: usize, n: usize) -> FitnessCases {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..vars).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
    let targets = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FitnessCases::from_rows(rows, targets).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn generated_trees_are_well_formed(seed: u64, extended: bool, vars in 1usize..4, max_depth in 0usize..9) {
        let fs = function_set(extended, vars);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tree(&mut rng, &fs, max_depth);
        prop_assert!(t.validate(&fs).is_ok());
        let (depth, size, end) = oracle_shape(t.nodes(), 0);
        prop_assert_eq!(end, t.len());
        prop_assert_eq!(depth, t.depth());
        prop_assert_eq!(size, t.node_count());
        prop_assert!(t.depth() <= max_depth);
        prop_assert!(ExprTree::from_prefix(t.nodes().to_vec()).is_ok());
    }

    #[test]
    fn crossover_conserves_nodes(seed: u64, vars in 1usize..3) {
        let fs = function_set(false, vars);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tree(&mut rng, &fs, 6);
        let b = random_tree(&mut rng, &fs, 6);
        let (c, d) = subtree_crossover(&a, &b, &mut rng);
        prop_assert_eq!(c.len() + d.len(), a.len() + b.len());
        prop_assert!(c.validate(&fs).is_ok() && d.validate(&fs).is_ok());
        let i = rng.gen_range(0..a.len());
        let j = rng.gen_range(0..b.len());
        let (c, d) = crossover_at(&a, i, &b, j);
        prop_assert_eq!(c.subtree_at(i), b.subtree_at(j));
        prop_assert_eq!(d.subtree_at(j), a.subtree_at(i));
        prop_assert_eq!(&c.nodes()[..i], &a.nodes()[..i]);
    }

    #[test]
    fn node_replacement_preserves_shape(seed: u64, extended: bool, prob in 0.0f64..=1.0) {
        let fs = function_set(extended, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tree(&mut rng, &fs, 7);
        let m = node_replacement(&t, prob, &fs, &mut rng);
        prop_assert_eq!(arities(&m), arities(&t));
        prop_assert!(m.validate(&fs).is_ok());
        let unchanged = node_replacement(&t, 0.0, &fs, &mut rng);
        prop_assert_eq!(unchanged, t);
    }

    #[test]
    fn subtree_mutation_respects_bounds(seed: u64, lo in 0usize..4, span in 0usize..4) {
        let fs = function_set(false, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tree(&mut rng, &fs, 6);
        let m = subtree_mutation(&t, lo, lo + span, &fs, &mut rng);
        prop_assert!(m.validate(&fs).is_ok());
        prop_assert!(m.depth() <= t.depth() + lo + span);
    }

    #[test]
    fn depth_limit_is_enforced(seed: u64) {
        let fs = function_set(false, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parent = random_tree(&mut rng, &fs, 5);
        let child = random_tree(&mut rng, &fs, 12);
        let limit = rng.gen_range(5..12);
        let kept = enforce_depth_limit(child.clone(), &parent, limit);
        prop_assert!(kept.depth() <= limit);
        if child.depth() <= limit {
            prop_assert_eq!(kept, child);
        } else {
            prop_assert_eq!(kept, parent);
        }
    }

    #[test]
    fn canonical_string_is_injective(seed: u64) {
        let fs = function_set(true, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tree(&mut rng, &fs, 3);
        let b = random_tree(&mut rng, &fs, 3);
        let (sa, sb) = (a.canonical_string(), b.canonical_string());
        prop_assert_eq!(sa.parse::<ExprTree>().unwrap(), a.clone());
        prop_assert_eq!(sa == sb, a == b);
    }

    #[test]
    fn evaluation_is_total(seed: u64, extended: bool, x in prop::num::f64::ANY, y in -1e300f64..1e300) {
        let fs = function_set(extended, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tree(&mut rng, &fs, 8);
        let x = if x.is_finite() { x } else { 0.0 };
        let v = t.evaluate(&[x, y]).unwrap();
        prop_assert!(v.is_finite());
        prop_assert!(v.abs() <= pimp_gp::expr::VALUE_BOUND);
    }

    #[test]
    fn vectorized_matches_pointwise(seed: u64) {
        let fs = function_set(true, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tree(&mut rng, &fs, 7);
        let cases = cases_for(&mut rng, 2, 17);
        let out = Evaluator::new().semantics(&t, &cases).unwrap();
        for (i, v) in out.iter().enumerate() {
            prop_assert_eq!(v.to_bits(), t.evaluate(&cases.row(i)).unwrap().to_bits());
        }
    }

    #[test]
    fn tournament_returns_argmin_of_draws(seed: u64, n in 1usize..60, k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fitness: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..20) as f64) / 4.0).collect();
        let mut replay = rng.clone();
        let picked = tournament(&fitness, k, &mut rng);
        let draws: Vec<usize> = (0..k).map(|_| replay.gen_range(0..n)).collect();
        let mut best = draws[0];
        for &d in &draws[1..] {
            if fitness[d] < fitness[best] {
                best = d;
            }
        }
        prop_assert_eq!(picked, best);
    }

    #[test]
    fn pimp_partner_is_closest_candidate(seed: u64, n in 2usize..30, k in 1usize..6, c in 1usize..8) {
        let fs = function_set(false, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cases = cases_for(&mut rng, 1, 8);
        let mut ev = Evaluator::new();
        let pop: Vec<Individual> = (0..n)
            .map(|_| {
                let s = random_tree(&mut rng, &fs, 3);
                let p = random_tree(&mut rng, &fs, 3);
                Individual::evaluate(s, p, &cases, &mut ev, true).unwrap()
            })
            .collect();
        let fitness: Vec<f64> = pop.iter().map(|i| i.fitness()).collect();
        let mut replay = rng.clone();
        let mut roles = RoleRecord::new(n);
        let (p1, p2) = pimp_select_pair(&pop, &fitness, k, c, &mut rng, &mut roles);

        let chooser = tournament(&fitness, k, &mut replay);
        prop_assert_eq!(p1, chooser);
        let pointwise = |t: &ExprTree| -> Vec<f64> { (0..cases.len()).map(|i| t.evaluate(&cases.row(i)).unwrap()).collect() };
        let pref = pointwise(pop[chooser].preference());
        let dist = |j: usize| {
            let sol = pointwise(pop[j].solution());
            let mut sum = 0.0;
            for (p, s) in pref.iter().zip(&sol) {
                sum += (s - p) * (s - p);
            }
            sum / pref.len() as f64
        };
        let candidates: Vec<usize> = (0..c).map(|_| replay.gen_range(0..n)).collect();
        let mut best = candidates[0];
        for &j in &candidates[1..] {
            if dist(j) < dist(best) {
                best = j;
            }
        }
        prop_assert_eq!(p2, best);
        prop_assert!(roles.flags()[p1].tournament && roles.flags()[p2].mate_choice);
    }
}

/// Two-sided exact p by enumerating all 2^n sign assignments over the average ranks.
fn brute_force_p(diffs: &[f64]) -> Option<(f64, f64)> {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nz.is_empty() {
        return None;
    }
    let n = nz.len();
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|a| {
            let below = abs.iter().filter(|b| *b < a).count() as f64;
            let equal = abs.iter().filter(|b| *b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total: f64 = ranks.iter().sum();
    let w = w_plus.min(total - w_plus);
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s <= w + 1e-9 {
            hits += 1;
        }
    }
    Some((w, (2.0 * hits as f64 / (1u64 << n) as f64).min(1.0)))
}

#[test]
fn wilcoxon_exact_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    for n in 1..=12 {
        for _ in 0..200 {
            // small integer differences give plenty of ties and zeros
            let diffs: Vec<f64> = (0..n).map(|_| rng.gen_range(-6i32..=6) as f64 * 0.5).collect();
            let sample = PairedSample::new("a", "b", diffs.iter().map(|d| (*d, 0.0)).collect());
            match (brute_force_p(&diffs), wilcoxon_signed_rank(&sample)) {
                (None, Err(AnalysisError::Degenerate)) => {}
                (Some((w, p)), Ok(r)) => {
                    assert!(r.exact && r.n <= EXACT_MAX_N);
                    assert!((r.statistic - w).abs() < 1e-12, "{diffs:?}");
                    assert!((r.p_value - p).abs() < 1e-12, "{diffs:?}: {} vs {p}", r.p_value);
                    checked += 1;
                }
                (o, r) => panic!("{diffs:?}: oracle {o:?} vs {r:?}"),
            }
        }
    }
    assert!(checked > 2000);
}

/// Bartlett's K² written out term by term.
fn bartlett_direct(groups: &[Vec<f64>]) -> f64 {
    let k = groups.len() as f64;
    let ns: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
    let n: f64 = ns.iter().sum();
    let vars: Vec<f64> = groups
        .iter()
        .map(|g| {
            let m = g.iter().sum::<f64>() / g.len() as f64;
            g.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (g.len() as f64 - 1.0)
        })
        .collect();
    let pooled = ns.iter().zip(&vars).map(|(ni, v)| (ni - 1.0) * v).sum::<f64>() / (n - k);
    let num = (n - k) * pooled.ln() - ns.iter().zip(&vars).map(|(ni, v)| (ni - 1.0) * v.ln()).sum::<f64>();
    let den = 1.0 + (ns.iter().map(|ni| 1.0 / (ni - 1.0)).sum::<f64>() - 1.0 / (n - k)) / (3.0 * (k - 1.0));
    num / den
}

#[test]
fn bartlett_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..500 {
        let k = rng.gen_range(2..6);
        let groups: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let scale = rng.gen_range(0.1..10.0);
                (0..rng.gen_range(2..15)).map(|_| rng.gen_range(-1.0..1.0) * scale).collect()
            })
            .collect();
        let r = bartlett(&groups).unwrap();
        let direct = bartlett_direct(&groups);
        assert!((r.statistic - direct).abs() <= 1e-9 * direct.abs().max(1.0), "{} vs {direct}", r.statistic);
        assert_eq!(r.df, k - 1);
        assert!((0.0..=1.0).contains(&r.p_value));
    }
}

#[test]
fn constants_stay_in_range_under_variation() {
    let fs = FunctionSet::extended(10);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let t = random_tree(&mut rng, &fs, 6);
        let m = node_replacement(&t, 0.3, &fs, &mut rng);
        for n in m.nodes() {
            if let Node::Leaf(Terminal::Constant(c)) = n {
                assert!((-10..=10).contains(c));
            }
        }
    }
}
