//! Expression trees over a small arithmetic/transcendental function set.
//!
//! Trees are stored as a flat prefix-order node vector. A subtree is always a
//! contiguous slice, which makes crossover and mutation cheap splices and lets
//! evaluation run as a single reverse scan over the vector.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::FitnessCases;

/// Below this magnitude a denominator or log argument is treated as zero.
pub const PROTECTION_EPSILON: f64 = 1e-9;
/// Every intermediate value is clamped into `[-VALUE_BOUND, VALUE_BOUND]`.
pub const VALUE_BOUND: f64 = 1e150;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("variable x{index} out of range for {variable_count} input(s)")]
    VariableOutOfRange { index: usize, variable_count: usize },
    #[error("expected {expected} input value(s), got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("malformed prefix sequence: {0}")]
    Malformed(String),
    #[error("constant {value} not permitted by the function set")]
    ConstantNotAllowed { value: i32 },
    #[error("operator {0} not in the function set")]
    OperatorNotAllowed(Operator),
    #[error("cannot parse expression: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operator {
    Add,
    Sub,
    Mul,
    ProtectedDiv,
    Sin,
    Cos,
    Exp,
    LogAbs,
    Sqrt,
    Abs,
}

impl Operator {
    pub const ALL: [Operator; 10] = [
        Operator::Add,
        Operator::Sub,
        Operator::Mul,
        Operator::ProtectedDiv,
        Operator::Sin,
        Operator::Cos,
        Operator::Exp,
        Operator::LogAbs,
        Operator::Sqrt,
        Operator::Abs,
    ];

    pub fn arity(self) -> usize {
        match self {
            Operator::Add | Operator::Sub | Operator::Mul | Operator::ProtectedDiv => 2,
            _ => 1,
        }
    }

    /// Mnemonic used by the canonical serialization.
    pub fn mnemonic(self) -> &'static str {
        match self {
            Operator::Add => "add",
            Operator::Sub => "sub",
            Operator::Mul => "mul",
            Operator::ProtectedDiv => "div",
            Operator::Sin => "sin",
            Operator::Cos => "cos",
            Operator::Exp => "exp",
            Operator::LogAbs => "log",
            Operator::Sqrt => "sqrt",
            Operator::Abs => "abs",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Operator> {
        Operator::ALL.into_iter().find(|op| op.mnemonic() == s)
    }

    #[inline]
    fn unary(self, a: f64) -> f64 {
        match self {
            Operator::Sin => a.sin(),
            Operator::Cos => a.cos(),
            Operator::Exp => a.exp(),
            Operator::LogAbs => protected_log(a),
            Operator::Sqrt => a.abs().sqrt(),
            Operator::Abs => a.abs(),
            _ => unreachable!("binary operator applied as unary"),
        }
    }

    #[inline]
    fn binary(self, a: f64, b: f64) -> f64 {
        match self {
            Operator::Add => a + b,
            Operator::Sub => a - b,
            Operator::Mul => a * b,
            Operator::ProtectedDiv => protected_div(a, b),
            _ => unreachable!("unary operator applied as binary"),
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[inline]
pub fn protected_div(a: f64, b: f64) -> f64 {
    if b.abs() < PROTECTION_EPSILON {
        1.0
    } else {
        a / b
    }
}

#[inline]
pub fn protected_log(a: f64) -> f64 {
    let m = a.abs();
    if m < PROTECTION_EPSILON {
        0.0
    } else {
        m.ln()
    }
}

/// Maps NaN to zero and clamps into the finite evaluation range.
#[inline]
pub fn clamp_value(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-VALUE_BOUND, VALUE_BOUND)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Terminal {
    Variable(usize),
    Constant(i32),
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminal::Variable(i) => write!(f, "x{i}"),
            Terminal::Constant(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Op(Operator),
    Leaf(Terminal),
}

impl Node {
    #[inline]
    pub fn arity(self) -> usize {
        match self {
            Node::Op(op) => op.arity(),
            Node::Leaf(_) => 0,
        }
    }
}

/// The primitives a tree may be built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSet {
    pub operators: Vec<Operator>,
    pub variable_count: usize,
    /// Inclusive integer range for ephemeral constants, if any.
    pub constant_range: Option<(i32, i32)>,
}

impl FunctionSet {
    /// `+ - * % sin cos exp ln|.|`, no constants.
    pub fn standard(variable_count: usize) -> Self {
        FunctionSet {
            operators: vec![
                Operator::Add,
                Operator::Sub,
                Operator::Mul,
                Operator::ProtectedDiv,
                Operator::Sin,
                Operator::Cos,
                Operator::Exp,
                Operator::LogAbs,
            ],
            variable_count,
            constant_range: None,
        }
    }

    /// The standard set plus `sqrt`, `abs` and integer constants in [-10, 10].
    pub fn extended(variable_count: usize) -> Self {
        let mut fs = FunctionSet::standard(variable_count);
        fs.operators.extend([Operator::Sqrt, Operator::Abs]);
        fs.constant_range = Some((-10, 10));
        fs
    }

    pub fn validate(&self) -> Result<(), ExprError> {
        if self.operators.is_empty() {
            return Err(ExprError::Malformed("function set has no operators".into()));
        }
        if self.variable_count == 0 {
            return Err(ExprError::Malformed("function set has no variables".into()));
        }
        if let Some((lo, hi)) = self.constant_range {
            if lo > hi {
                return Err(ExprError::Malformed(format!("empty constant range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Number of terminal choices: each variable plus one slot for an ephemeral constant.
    fn terminal_slots(&self) -> usize {
        self.variable_count + usize::from(self.constant_range.is_some())
    }

    pub fn random_terminal<R: Rng + ?Sized>(&self, rng: &mut R) -> Terminal {
        let slot = rng.gen_range(0..self.terminal_slots());
        if slot < self.variable_count {
            Terminal::Variable(slot)
        } else {
            let (lo, hi) = self.constant_range.expect("constant slot without range");
            Terminal::Constant(rng.gen_range(lo..=hi))
        }
    }

    pub fn random_operator<R: Rng + ?Sized>(&self, rng: &mut R) -> Operator {
        self.operators[rng.gen_range(0..self.operators.len())]
    }

    /// Uniform draw among operators of the given arity, if any exist.
    pub fn random_operator_with_arity<R: Rng + ?Sized>(
        &self,
        arity: usize,
        rng: &mut R,
    ) -> Option<Operator> {
        let n = self.operators.iter().filter(|op| op.arity() == arity).count();
        if n == 0 {
            return None;
        }
        let k = rng.gen_range(0..n);
        self.operators.iter().copied().filter(|op| op.arity() == arity).nth(k)
    }
}

/// A rooted expression tree stored in prefix order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExprTree {
    nodes: Vec<Node>,
}

impl ExprTree {
    pub fn leaf(t: Terminal) -> Self {
        ExprTree { nodes: vec![Node::Leaf(t)] }
    }

    pub fn var(index: usize) -> Self {
        ExprTree::leaf(Terminal::Variable(index))
    }

    pub fn constant(value: i32) -> Self {
        ExprTree::leaf(Terminal::Constant(value))
    }

    /// Builds an internal node. Panics if the child count does not match the arity.
    pub fn op(op: Operator, children: Vec<ExprTree>) -> Self {
        assert_eq!(
            children.len(),
            op.arity(),
            "{op} expects {} children, got {}",
            op.arity(),
            children.len()
        );
        let mut nodes = Vec::with_capacity(1 + children.iter().map(|c| c.len()).sum::<usize>());
        nodes.push(Node::Op(op));
        for c in children {
            nodes.extend(c.nodes);
        }
        ExprTree { nodes }
    }

    pub fn unary(op: Operator, child: ExprTree) -> Self {
        ExprTree::op(op, vec![child])
    }

    pub fn binary(op: Operator, left: ExprTree, right: ExprTree) -> Self {
        ExprTree::op(op, vec![left, right])
    }

    /// Wraps a prefix sequence after checking it is well formed.
    pub fn from_prefix(nodes: Vec<Node>) -> Result<Self, ExprError> {
        check_prefix(&nodes)?;
        Ok(ExprTree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> Node {
        self.nodes[0]
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Depth of the tree; a single leaf has depth zero.
    pub fn depth(&self) -> usize {
        let mut stack: Vec<usize> = Vec::with_capacity(32);
        for node in self.nodes.iter().rev() {
            let d = match node.arity() {
                0 => 0,
                k => {
                    let mut m = 0;
                    for _ in 0..k {
                        m = m.max(stack.pop().expect("well-formed prefix"));
                    }
                    m + 1
                }
            };
            stack.push(d);
        }
        stack[0]
    }

    /// Index range of the subtree rooted at `index`.
    pub fn subtree(&self, index: usize) -> Range<usize> {
        let mut open = 1usize;
        let mut end = index;
        while open > 0 {
            open = open + self.nodes[end].arity() - 1;
            end += 1;
        }
        index..end
    }

    pub fn subtree_at(&self, index: usize) -> ExprTree {
        ExprTree { nodes: self.nodes[self.subtree(index)].to_vec() }
    }

    /// Returns a copy with the subtree at `index` replaced by `replacement`.
    pub fn replace_subtree(&self, index: usize, replacement: &[Node]) -> ExprTree {
        let range = self.subtree(index);
        let mut nodes =
            Vec::with_capacity(self.nodes.len() - range.len() + replacement.len());
        nodes.extend_from_slice(&self.nodes[..range.start]);
        nodes.extend_from_slice(replacement);
        nodes.extend_from_slice(&self.nodes[range.end..]);
        ExprTree { nodes }
    }

    pub(crate) fn nodes_mut(&mut self) -> &mut [Node] {
        &mut self.nodes
    }

    /// Prefix serialization, e.g. `(add x0 (sin x1))`. Equal strings iff equal structure.
    pub fn canonical_string(&self) -> String {
        let mut out = String::with_capacity(self.nodes.len() * 4);
        // Pending child counts of the open operators.
        let mut open: Vec<usize> = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            match node {
                Node::Op(op) => {
                    out.push('(');
                    out.push_str(op.mnemonic());
                    open.push(op.arity());
                    continue;
                }
                Node::Leaf(t) => {
                    use std::fmt::Write;
                    let _ = write!(out, "{t}");
                }
            }
            while let Some(top) = open.last_mut() {
                *top -= 1;
                if *top > 0 {
                    break;
                }
                out.push(')');
                open.pop();
            }
        }
        out
    }

    /// Checks well-formedness and membership in `fs`.
    pub fn validate(&self, fs: &FunctionSet) -> Result<(), ExprError> {
        check_prefix(&self.nodes)?;
        for node in &self.nodes {
            match *node {
                Node::Op(op) if !fs.operators.contains(&op) => {
                    return Err(ExprError::OperatorNotAllowed(op));
                }
                Node::Leaf(Terminal::Variable(index)) if index >= fs.variable_count => {
                    return Err(ExprError::VariableOutOfRange {
                        index,
                        variable_count: fs.variable_count,
                    });
                }
                Node::Leaf(Terminal::Constant(value)) => match fs.constant_range {
                    Some((lo, hi)) if (lo..=hi).contains(&value) => {}
                    _ => return Err(ExprError::ConstantNotAllowed { value }),
                },
                _ => {}
            }
        }
        Ok(())
    }

    fn max_variable(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf(Terminal::Variable(i)) => Some(*i),
                _ => None,
            })
            .max()
    }

    /// Evaluates the tree at a single input point.
    pub fn evaluate(&self, inputs: &[f64]) -> Result<f64, ExprError> {
        if let Some(index) = self.max_variable() {
            if index >= inputs.len() {
                return Err(ExprError::VariableOutOfRange { index, variable_count: inputs.len() });
            }
        }
        let mut stack: Vec<f64> = Vec::with_capacity(32);
        for node in self.nodes.iter().rev() {
            let v = match *node {
                Node::Leaf(Terminal::Variable(i)) => inputs[i],
                Node::Leaf(Terminal::Constant(c)) => f64::from(c),
                Node::Op(op) if op.arity() == 1 => op.unary(stack.pop().unwrap()),
                Node::Op(op) => {
                    let a = stack.pop().unwrap();
                    let b = stack.pop().unwrap();
                    op.binary(a, b)
                }
            };
            stack.push(clamp_value(v));
        }
        Ok(stack[0])
    }

    pub fn random<R: Rng + ?Sized>(
        method: InitMethod,
        depth_target: usize,
        fs: &FunctionSet,
        rng: &mut R,
    ) -> ExprTree {
        let mut nodes = Vec::new();
        grow_into(&mut nodes, method, 0, depth_target, fs, rng);
        ExprTree { nodes }
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_string())
    }
}

impl FromStr for ExprTree {
    type Err = ExprError;

    /// Parses the canonical prefix form produced by [`ExprTree::canonical_string`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let spaced = s.replace('(', " ( ").replace(')', " ) ");
        let mut nodes = Vec::new();
        let mut expect_op = false;
        for tok in spaced.split_whitespace() {
            if tok == "(" {
                expect_op = true;
                continue;
            }
            if tok == ")" {
                continue;
            }
            if expect_op {
                let op = Operator::from_mnemonic(tok)
                    .ok_or_else(|| ExprError::Parse(format!("unknown operator `{tok}`")))?;
                nodes.push(Node::Op(op));
                expect_op = false;
            } else if let Some(idx) = tok.strip_prefix('x') {
                let i = idx
                    .parse()
                    .map_err(|_| ExprError::Parse(format!("bad variable `{tok}`")))?;
                nodes.push(Node::Leaf(Terminal::Variable(i)));
            } else {
                let c = tok
                    .parse()
                    .map_err(|_| ExprError::Parse(format!("bad token `{tok}`")))?;
                nodes.push(Node::Leaf(Terminal::Constant(c)));
            }
        }
        let tree = ExprTree::from_prefix(nodes)?;
        if tree.canonical_string() != s.trim() {
            return Err(ExprError::Parse(format!("`{s}` is not in canonical form")));
        }
        Ok(tree)
    }
}

fn check_prefix(nodes: &[Node]) -> Result<(), ExprError> {
    if nodes.is_empty() {
        return Err(ExprError::Malformed("empty tree".into()));
    }
    let mut open = 1usize;
    for (i, n) in nodes.iter().enumerate() {
        if open == 0 {
            return Err(ExprError::Malformed(format!("trailing nodes after position {i}")));
        }
        open = open + n.arity() - 1;
    }
    if open != 0 {
        return Err(ExprError::Malformed(format!("{open} missing child node(s)")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitMethod {
    Full,
    Grow,
}

fn grow_into<R: Rng + ?Sized>(
    nodes: &mut Vec<Node>,
    method: InitMethod,
    depth: usize,
    target: usize,
    fs: &FunctionSet,
    rng: &mut R,
) {
    let pick_terminal = if depth >= target {
        true
    } else {
        match method {
            InitMethod::Full => false,
            InitMethod::Grow => {
                let t = fs.terminal_slots();
                rng.gen_range(0..t + fs.operators.len()) < t
            }
        }
    };
    if pick_terminal {
        nodes.push(Node::Leaf(fs.random_terminal(rng)));
    } else {
        let op = fs.random_operator(rng);
        nodes.push(Node::Op(op));
        for _ in 0..op.arity() {
            grow_into(nodes, method, depth + 1, target, fs, rng);
        }
    }
}

/// Ramped half-and-half: depth targets uniform in `[min_depth, max_depth]`,
/// Grow on even positions and Full on odd ones (Grow takes the odd extra).
pub fn ramped_half_and_half<R: Rng + ?Sized>(
    count: usize,
    min_depth: usize,
    max_depth: usize,
    fs: &FunctionSet,
    rng: &mut R,
) -> Vec<ExprTree> {
    assert!(min_depth <= max_depth, "min_depth {min_depth} > max_depth {max_depth}");
    (0..count)
        .map(|i| {
            let method = if i % 2 == 0 { InitMethod::Grow } else { InitMethod::Full };
            let d = rng.gen_range(min_depth..=max_depth);
            ExprTree::random(method, d, fs, rng)
        })
        .collect()
}

/// One ramped half-and-half draw: method by fair coin, depth uniform in range.
pub fn ramped_tree<R: Rng + ?Sized>(
    min_depth: usize,
    max_depth: usize,
    fs: &FunctionSet,
    rng: &mut R,
) -> ExprTree {
    let method = if rng.gen_bool(0.5) { InitMethod::Full } else { InitMethod::Grow };
    let d = rng.gen_range(min_depth..=max_depth);
    ExprTree::random(method, d, fs, rng)
}

// Per-operator loops so the dispatch happens once per node, not once per case.
fn map_unary(op: Operator, out: &mut [f64]) {
    fn apply(out: &mut [f64], f: impl Fn(f64) -> f64) {
        for v in out.iter_mut() {
            *v = clamp_value(f(*v));
        }
    }
    match op {
        Operator::Sin => apply(out, f64::sin),
        Operator::Cos => apply(out, f64::cos),
        Operator::Exp => apply(out, f64::exp),
        Operator::LogAbs => apply(out, protected_log),
        Operator::Sqrt => apply(out, |a| a.abs().sqrt()),
        Operator::Abs => apply(out, f64::abs),
        _ => unreachable!("binary operator applied as unary"),
    }
}

fn map_binary_left(op: Operator, x: &mut [f64], y: &[f64]) {
    fn apply(x: &mut [f64], y: &[f64], f: impl Fn(f64, f64) -> f64) {
        for (xv, yv) in x.iter_mut().zip(y) {
            *xv = clamp_value(f(*xv, *yv));
        }
    }
    match op {
        Operator::Add => apply(x, y, |a, b| a + b),
        Operator::Sub => apply(x, y, |a, b| a - b),
        Operator::Mul => apply(x, y, |a, b| a * b),
        Operator::ProtectedDiv => apply(x, y, protected_div),
        _ => unreachable!("unary operator applied as binary"),
    }
}

fn map_binary_right(op: Operator, x: &[f64], y: &mut [f64]) {
    fn apply(x: &[f64], y: &mut [f64], f: impl Fn(f64, f64) -> f64) {
        for (yv, xv) in y.iter_mut().zip(x) {
            *yv = clamp_value(f(*xv, *yv));
        }
    }
    match op {
        Operator::Add => apply(x, y, |a, b| a + b),
        Operator::Sub => apply(x, y, |a, b| a - b),
        Operator::Mul => apply(x, y, |a, b| a * b),
        Operator::ProtectedDiv => apply(x, y, protected_div),
        _ => unreachable!("unary operator applied as binary"),
    }
}

enum Slot {
    Column(usize),
    Buffer(Vec<f64>),
}

/// Evaluates trees over every fitness case at once, reusing scratch buffers.
#[derive(Default)]
pub struct Evaluator {
    pool: Vec<Vec<f64>>,
    stack: Vec<Slot>,
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    fn take_buffer(&mut self, n: usize) -> Vec<f64> {
        let mut b = self.pool.pop().unwrap_or_default();
        b.clear();
        b.resize(n, 0.0);
        b
    }

    /// Output of `tree` on every case, in case order.
    pub fn semantics(&mut self, tree: &ExprTree, cases: &FitnessCases) -> Result<Vec<f64>, ExprError> {
        let columns = cases.columns();
        let n = cases.len();
        if let Some(index) = tree.max_variable() {
            if index >= columns.len() {
                return Err(ExprError::VariableOutOfRange { index, variable_count: columns.len() });
            }
        }
        self.stack.clear();
        for node in tree.nodes.iter().rev() {
            let slot = match *node {
                Node::Leaf(Terminal::Variable(i)) => Slot::Column(i),
                Node::Leaf(Terminal::Constant(c)) => {
                    let mut b = self.take_buffer(n);
                    b.fill(f64::from(c));
                    Slot::Buffer(b)
                }
                Node::Op(op) if op.arity() == 1 => {
                    let a = self.stack.pop().expect("well-formed prefix");
                    let mut out = match a {
                        Slot::Buffer(b) => b,
                        Slot::Column(i) => {
                            let mut b = self.take_buffer(n);
                            b.copy_from_slice(&columns[i]);
                            b
                        }
                    };
                    map_unary(op, &mut out);
                    Slot::Buffer(out)
                }
                Node::Op(op) => {
                    let a = self.stack.pop().expect("well-formed prefix");
                    let b = self.stack.pop().expect("well-formed prefix");
                    let out = match (a, b) {
                        (Slot::Buffer(mut x), b) => {
                            let y: &[f64] = match &b {
                                Slot::Buffer(y) => y,
                                Slot::Column(j) => &columns[*j],
                            };
                            map_binary_left(op, &mut x, y);
                            if let Slot::Buffer(y) = b {
                                self.pool.push(y);
                            }
                            x
                        }
                        (Slot::Column(i), Slot::Buffer(mut y)) => {
                            map_binary_right(op, &columns[i], &mut y);
                            y
                        }
                        (Slot::Column(i), Slot::Column(j)) => {
                            let mut out = self.take_buffer(n);
                            out.copy_from_slice(&columns[i]);
                            map_binary_left(op, &mut out, &columns[j]);
                            out
                        }
                    };
                    Slot::Buffer(out)
                }
            };
            self.stack.push(slot);
        }
        let result = match self.stack.pop().expect("non-empty tree") {
            Slot::Buffer(b) => b,
            Slot::Column(i) => columns[i].clone(),
        };
        Ok(result)
    }

    /// Hands a semantics vector back for reuse.
    pub fn recycle(&mut self, buf: Vec<f64>) {
        self.pool.push(buf);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use Operator::*;

    fn x0() -> ExprTree {
        ExprTree::var(0)
    }

    fn koza1_tree() -> ExprTree {
        // x^4 + x^3 + x^2 + x
        let x2 = ExprTree::binary(Mul, x0(), x0());
        let x3 = ExprTree::binary(Mul, x2.clone(), x0());
        let x4 = ExprTree::binary(Mul, x3.clone(), x0());
        ExprTree::binary(
            Add,
            ExprTree::binary(Add, x4, x3),
            ExprTree::binary(Add, x2, x0()),
        )
    }

    fn pagie_tree() -> ExprTree {
        // 1/(1+v^-4) written as v^4 / (v^4 + 1) with 1 = v/v
        let term = |v: usize| {
            let sq = ExprTree::binary(Mul, ExprTree::var(v), ExprTree::var(v));
            let p4 = ExprTree::binary(Mul, sq.clone(), sq);
            let one = ExprTree::binary(ProtectedDiv, ExprTree::var(v), ExprTree::var(v));
            ExprTree::binary(ProtectedDiv, p4.clone(), ExprTree::binary(Add, p4, one))
        };
        ExprTree::binary(Add, term(0), term(1))
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(koza1_tree().evaluate(&[2.0]).unwrap(), 30.0);
        assert_eq!(x0().evaluate(&[3.5]).unwrap(), 3.5);
        let div = ExprTree::binary(ProtectedDiv, x0(), x0());
        assert_eq!(div.evaluate(&[0.0]).unwrap(), 1.0);
        assert_eq!(pagie_tree().evaluate(&[1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn evaluate_rejects_missing_variable() {
        let t = ExprTree::binary(Add, x0(), ExprTree::var(3));
        assert!(matches!(
            t.evaluate(&[1.0]),
            Err(ExprError::VariableOutOfRange { index: 3, .. })
        ));
    }

    #[test]
    fn protections() {
        assert_eq!(protected_log(0.0), 0.0);
        assert_eq!(protected_log(-std::f64::consts::E), 1.0);
        let e = ExprTree::unary(Exp, ExprTree::unary(Exp, ExprTree::unary(Exp, x0())));
        let v = e.evaluate(&[10.0]).unwrap();
        assert_eq!(v, VALUE_BOUND);
        let s = ExprTree::unary(Sqrt, x0());
        assert_eq!(s.evaluate(&[-4.0]).unwrap(), 2.0);
        assert_eq!(clamp_value(f64::NAN), 0.0);
    }

    #[test]
    fn depth_and_count_examples() {
        let leaf = x0();
        let add = ExprTree::binary(Add, x0(), x0());
        let add_sin = ExprTree::binary(Add, ExprTree::unary(Sin, x0()), x0());
        assert_eq!((leaf.depth(), leaf.node_count()), (0, 1));
        assert_eq!((add.depth(), add.node_count()), (1, 3));
        assert_eq!((add_sin.depth(), add_sin.node_count()), (2, 4));
    }

    #[test]
    fn canonical_examples() {
        assert_eq!(x0().canonical_string(), "x0");
        assert_eq!(ExprTree::binary(Add, x0(), x0()).canonical_string(), "(add x0 x0)");
        let a = ExprTree::unary(Sin, x0());
        let b = ExprTree::unary(Sin, x0());
        assert_eq!(a.canonical_string(), b.canonical_string());
        let nested = ExprTree::binary(
            Sub,
            ExprTree::binary(Mul, ExprTree::constant(-3), x0()),
            ExprTree::unary(Cos, ExprTree::var(1)),
        );
        assert_eq!(nested.canonical_string(), "(sub (mul -3 x0) (cos x1))");
        assert_eq!(nested.canonical_string().parse::<ExprTree>().unwrap(), nested);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!("(add x0)".parse::<ExprTree>().is_err());
        assert!("(foo x0 x0)".parse::<ExprTree>().is_err());
        assert!("x0 x1".parse::<ExprTree>().is_err());
        assert!("".parse::<ExprTree>().is_err());
    }

    #[test]
    fn subtree_ranges() {
        let t = ExprTree::binary(Add, ExprTree::unary(Sin, x0()), ExprTree::var(1));
        assert_eq!(t.subtree(0), 0..4);
        assert_eq!(t.subtree(1), 1..3);
        assert_eq!(t.subtree(3), 3..4);
        let r = t.replace_subtree(1, ExprTree::var(1).nodes());
        assert_eq!(r.canonical_string(), "(add x1 x1)");
    }

    #[test]
    fn full_and_grow_shapes() {
        let fs = FunctionSet::standard(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(ExprTree::random(InitMethod::Full, 0, &fs, &mut rng).len(), 1);
        for _ in 0..200 {
            let t = ExprTree::random(InitMethod::Full, 2, &fs, &mut rng);
            // every leaf at depth exactly 2
            let mut stack = vec![0usize];
            for n in t.nodes() {
                let d = stack.pop().unwrap();
                match n.arity() {
                    0 => assert_eq!(d, 2),
                    k => stack.extend(std::iter::repeat(d + 1).take(k)),
                }
            }
        }
        let mut max_seen = 0;
        for _ in 0..10_000 {
            let t = ExprTree::random(InitMethod::Grow, 7, &fs, &mut rng);
            max_seen = max_seen.max(t.depth());
        }
        assert!(max_seen <= 7);
    }

    #[test]
    fn full_binary_node_count() {
        let fs = FunctionSet { operators: vec![Add, Mul], variable_count: 2, constant_range: None };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for d in 0..8 {
            let t = ExprTree::random(InitMethod::Full, d, &fs, &mut rng);
            assert_eq!(t.node_count(), (1 << (d + 1)) - 1);
        }
    }

    #[test]
    fn ramped_examples() {
        let fs = FunctionSet::standard(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trees = ramped_half_and_half(100, 2, 7, &fs, &mut rng);
        assert_eq!(trees.len(), 100);
        assert!(trees.iter().all(|t| t.depth() <= 7));
        // Full outputs sit at odd positions and always reach their target (>= 2).
        assert!(trees.iter().skip(1).step_by(2).all(|t| t.depth() >= 2));
        let leaves = ramped_half_and_half(2, 0, 0, &fs, &mut rng);
        assert!(leaves.iter().all(|t| t.len() == 1));
        assert!(ramped_half_and_half(0, 2, 7, &fs, &mut rng).is_empty());
    }

    #[test]
    fn constants_only_when_allowed() {
        let fs = FunctionSet::extended(10);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut saw_constant = false;
        for t in ramped_half_and_half(200, 2, 7, &fs, &mut rng) {
            t.validate(&fs).unwrap();
            saw_constant |= t.nodes().iter().any(|n| matches!(n, Node::Leaf(Terminal::Constant(_))));
        }
        assert!(saw_constant);
        let plain = FunctionSet::standard(10);
        assert!(ExprTree::constant(3).validate(&plain).is_err());
        assert!(ExprTree::constant(11).validate(&fs).is_err());
    }

    #[test]
    fn vectorized_matches_pointwise() {
        let fs = FunctionSet::extended(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> =
            (0..25).map(|_| vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
        let targets = vec![0.0; rows.len()];
        let cases = FitnessCases::from_rows(rows.clone(), targets).unwrap();
        let mut ev = Evaluator::new();
        for t in ramped_half_and_half(300, 0, 8, &fs, &mut rng) {
            let sem = ev.semantics(&t, &cases).unwrap();
            for (row, v) in rows.iter().zip(&sem) {
                assert_eq!(t.evaluate(row).unwrap().to_bits(), v.to_bits(), "{t}");
            }
            ev.recycle(sem);
        }
    }
}
