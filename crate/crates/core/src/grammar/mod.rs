//! Grammar representation for the three-schema PCFG family:
//! start rules `S -> A`, binary rules `A -> B C` with children drawn from
//! nonterminals and preterminals, and preterminal rules `T -> w`.
//!
//! All probabilities live in natural-log space; `-inf` encodes a forbidden rule.

mod sample;
mod sexpr;
mod tree;

use ndarray::{Array1, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::logsumexp;

pub use sample::{sample_corpus, sample_sentence, sample_with_rng};
pub use sexpr::{parse_sexprs, LabeledTree};
pub use tree::{tree_to_spans, ParseTree, Span, SpanSet, TreeNode, TrivialSpanPolicy};

/// Normalization tolerance used by [`validate_grammar`] in normalized mode.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GrammarShape {
    pub num_nonterminals: usize,
    pub num_preterminals: usize,
    pub vocab_size: usize,
}

impl GrammarShape {
    pub fn new(num_nonterminals: usize, num_preterminals: usize, vocab_size: usize) -> Result<Self> {
        if num_nonterminals == 0 || num_preterminals == 0 || vocab_size == 0 {
            return Err(Error::Structural(format!(
                "grammar shape counts must be positive, got |N|={num_nonterminals} |P|={num_preterminals} |V|={vocab_size}"
            )));
        }
        Ok(Self {
            num_nonterminals,
            num_preterminals,
            vocab_size,
        })
    }

    /// Size of the binary-rule child alphabet, nonterminals followed by preterminals.
    pub fn num_children(&self) -> usize {
        self.num_nonterminals + self.num_preterminals
    }

    pub fn with_vocab_size(self, vocab_size: usize) -> Self {
        Self { vocab_size, ..self }
    }
}

/// A token sequence: indices into a vocabulary plus the original strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<usize>,
    pub raw_tokens: Vec<String>,
}

impl Sentence {
    pub fn new(tokens: Vec<usize>, raw_tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Degenerate("sentence must not be empty".into()));
        }
        if tokens.len() != raw_tokens.len() {
            return Err(Error::Structural(format!(
                "{} token indices but {} raw tokens",
                tokens.len(),
                raw_tokens.len()
            )));
        }
        Ok(Self { tokens, raw_tokens })
    }

    /// Builds a sentence whose raw tokens are synthetic names `w<index>`.
    pub fn from_indices(tokens: Vec<usize>) -> Result<Self> {
        let raw = tokens.iter().map(|t| format!("w{t}")).collect();
        Self::new(tokens, raw)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.tokens.iter().position(|&t| t >= vocab_size) {
            Some(pos) => Err(Error::Structural(format!(
                "token {} at position {pos} is outside a vocabulary of size {vocab_size}",
                self.tokens[pos]
            ))),
            None => Ok(()),
        }
    }
}

/// Dense log-potential tables for one grammar instance.
///
/// `binary_logp[[a, b, c]]` is `log p(A_a -> X_b X_c)` where child indices
/// below `|N|` are nonterminals and the rest are preterminals offset by `|N|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    pub start_logp: Array1<f64>,
    pub binary_logp: Array3<f64>,
    pub preterm_logp: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMode {
    /// Every distribution must be normalized in log space.
    Normalized,
    /// Unconstrained finite potentials (or `-inf`); used for gradient checks.
    Potential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub mode: ValidationMode,
    pub max_start_error: f64,
    pub max_binary_error: f64,
    pub max_preterm_error: f64,
    /// Location of the distribution with the largest normalization error.
    pub worst: Option<String>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn max_error(&self) -> f64 {
        self.max_start_error
            .max(self.max_binary_error)
            .max(self.max_preterm_error)
    }
}

impl RuleTable {
    /// A table where every distribution is uniform.
    pub fn uniform(shape: GrammarShape) -> Self {
        let n = shape.num_nonterminals;
        let c = shape.num_children();
        let p = shape.num_preterminals;
        let v = shape.vocab_size;
        Self {
            start_logp: Array1::from_elem(n, -(n as f64).ln()),
            binary_logp: Array3::from_elem((n, c, c), -((c * c) as f64).ln()),
            preterm_logp: Array2::from_elem((p, v), -(v as f64).ln()),
        }
    }

    /// Normalized table from seeded Gaussian scores with standard deviation `scale`.
    pub fn random(shape: GrammarShape, scale: f64, seed: u64) -> Self {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale).expect("finite scale");
        let (n, c) = (shape.num_nonterminals, shape.num_children());
        let mut draw = || normal.sample(&mut rng);
        let start = Array1::from_shape_fn(n, |_| draw());
        let binary = Array3::from_shape_fn((n, c, c), |_| draw());
        let preterm = Array2::from_shape_fn((shape.num_preterminals, shape.vocab_size), |_| draw());
        Self::from_scores(start, binary, preterm)
    }

    /// Builds a normalized table by applying a row-wise log-softmax to raw scores.
    pub fn from_scores(start: Array1<f64>, binary: Array3<f64>, preterm: Array2<f64>) -> Self {
        let mut table = Self {
            start_logp: start,
            binary_logp: binary,
            preterm_logp: preterm,
        };
        table.normalize();
        table
    }

    /// Row-wise log-softmax in place.
    pub fn normalize(&mut self) {
        log_softmax_in_place(self.start_logp.as_slice_mut().expect("contiguous"));
        let (n, c, _) = self.binary_logp.dim();
        let flat = self.binary_logp.as_slice_mut().expect("contiguous");
        for a in 0..n {
            log_softmax_in_place(&mut flat[a * c * c..(a + 1) * c * c]);
        }
        for mut row in self.preterm_logp.rows_mut() {
            log_softmax_in_place(row.as_slice_mut().expect("contiguous"));
        }
    }

    /// Infers the grammar shape from the table dimensions.
    pub fn shape(&self) -> Result<GrammarShape> {
        let n = self.start_logp.len();
        let (bn, c1, c2) = self.binary_logp.dim();
        let (p, v) = self.preterm_logp.dim();
        if bn != n || c1 != c2 || c1 != n + p {
            return Err(Error::Structural(format!(
                "inconsistent table dimensions: start {n}, binary {bn}x{c1}x{c2}, preterminal {p}x{v}"
            )));
        }
        GrammarShape::new(n, p, v)
    }

    pub fn check_shape(&self, shape: &GrammarShape) -> Result<()> {
        let actual = self.shape()?;
        if actual != *shape {
            return Err(Error::Structural(format!(
                "table shape {actual:?} does not match expected {shape:?}"
            )));
        }
        Ok(())
    }

    /// Log-probability of a tree; leaves must carry preterminals and internal
    /// nodes symbols. Returns `-inf` if any used rule is forbidden.
    pub fn tree_logp(&self, tree: &ParseTree, sentence: &Sentence) -> Result<f64> {
        let n_nt = self.start_logp.len();
        let root_symbol = match tree.root() {
            TreeNode::Internal { symbol, .. } => *symbol,
            TreeNode::Leaf { .. } => {
                return Err(Error::Degenerate("single-leaf tree has no start rule".into()))
            }
        };
        let root_symbol =
            root_symbol.ok_or_else(|| Error::Structural("root node carries no symbol".into()))?;
        let mut total = self.start_logp[root_symbol];
        let mut stack = vec![tree.root()];
        while let Some(node) = stack.pop() {
            match node {
                TreeNode::Leaf {
                    position,
                    preterminal,
                } => {
                    let t = preterminal
                        .ok_or_else(|| Error::Structural("leaf carries no preterminal".into()))?;
                    total += self.preterm_logp[[t, sentence.tokens[*position]]];
                }
                TreeNode::Internal {
                    symbol,
                    left,
                    right,
                    ..
                } => {
                    let a = symbol
                        .ok_or_else(|| Error::Structural("internal node carries no symbol".into()))?;
                    let b = child_index(left, n_nt)?;
                    let c = child_index(right, n_nt)?;
                    total += self.binary_logp[[a, b, c]];
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        Ok(total)
    }
}

fn child_index(node: &TreeNode, n_nt: usize) -> Result<usize> {
    match node {
        TreeNode::Leaf { preterminal, .. } => preterminal
            .map(|t| n_nt + t)
            .ok_or_else(|| Error::Structural("leaf carries no preterminal".into())),
        TreeNode::Internal { symbol, .. } => {
            symbol.ok_or_else(|| Error::Structural("internal node carries no symbol".into()))
        }
    }
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let z = logsumexp(row.iter().copied());
    for x in row.iter_mut() {
        *x -= z;
    }
}

fn scan_distribution(
    values: ArrayView1<'_, f64>,
    location: impl Fn() -> String,
    mode: ValidationMode,
) -> Result<f64> {
    for (k, &x) in values.iter().enumerate() {
        if x.is_nan() {
            return Err(Error::Validation {
                location: format!("{}[{k}]", location()),
                message: "NaN entry".into(),
            });
        }
        if x == f64::INFINITY {
            return Err(Error::Validation {
                location: format!("{}[{k}]", location()),
                message: "+inf entry".into(),
            });
        }
    }
    Ok(match mode {
        ValidationMode::Potential => 0.0,
        ValidationMode::Normalized => {
            let z = logsumexp(values.iter().copied());
            if z.is_finite() {
                z.abs()
            } else {
                f64::INFINITY
            }
        }
    })
}

/// Checks a rule table against a grammar shape.
///
/// In normalized mode every start vector, binary slice and preterminal row
/// must have log-sum-exp within [`NORMALIZATION_TOLERANCE`] of zero; in
/// potential mode only NaN and `+inf` are rejected.
pub fn validate_grammar(
    table: &RuleTable,
    shape: &GrammarShape,
    mode: ValidationMode,
) -> Result<ValidationReport> {
    table.check_shape(shape)?;
    let mut worst: Option<(f64, String)> = None;
    let mut track = |err: f64, loc: String| {
        if worst.as_ref().is_none_or(|(w, _)| err > *w) {
            worst = Some((err, loc));
        }
        err
    };

    let max_start_error = track(
        scan_distribution(table.start_logp.view(), || "start".into(), mode)?,
        "start".into(),
    );

    let mut max_binary_error: f64 = 0.0;
    for a in 0..shape.num_nonterminals {
        let slice = table.binary_logp.index_axis(ndarray::Axis(0), a);
        let flat = slice.to_shape(shape.num_children() * shape.num_children()).expect("reshape");
        let err = scan_distribution(flat.view(), || format!("binary[{a}]"), mode)?;
        max_binary_error = max_binary_error.max(track(err, format!("binary[{a}]")));
    }

    let mut max_preterm_error: f64 = 0.0;
    for (t, row) in table.preterm_logp.rows().into_iter().enumerate() {
        let err = scan_distribution(row, || format!("preterminal[{t}]"), mode)?;
        max_preterm_error = max_preterm_error.max(track(err, format!("preterminal[{t}]")));
    }

    let max = max_start_error.max(max_binary_error).max(max_preterm_error);
    Ok(ValidationReport {
        mode,
        max_start_error,
        max_binary_error,
        max_preterm_error,
        worst: worst.filter(|(e, _)| *e > 0.0).map(|(_, loc)| loc),
        passed: max < NORMALIZATION_TOLERANCE,
    })
}
