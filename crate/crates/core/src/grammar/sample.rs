use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{validate_grammar, ParseTree, RuleTable, Sentence, TreeNode, ValidationMode};
use crate::error::{Error, Result};

fn draw<R: Rng>(logp: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, lp) in logp.enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last = k;
            acc += p;
            if u < acc {
                return k;
            }
        }
    }
    // rounding slack: fall back to the last outcome with mass
    last
}

enum Pending {
    Nonterminal(usize),
    Preterminal(usize),
}

/// Draws one (sentence, tree) pair from `rng`. Returns `None` when the
/// derivation would exceed `max_length` tokens.
pub fn sample_with_rng<R: Rng>(
    table: &RuleTable,
    max_length: usize,
    rng: &mut R,
) -> Result<Option<(Sentence, ParseTree)>> {
    let n_nt = table.start_logp.len();
    let c = table.binary_logp.dim().1;
    let root = draw(table.start_logp.iter().copied(), rng);

    // Rule choices are recorded in pre-order; token positions are assigned
    // when the tree is rebuilt afterwards.
    #[derive(Debug)]
    enum Step {
        Binary(usize),
        Leaf(usize, usize),
    }
    let mut steps = Vec::new();
    let mut stack = vec![Pending::Nonterminal(root)];
    let mut leaves = 0usize;
    while let Some(item) = stack.pop() {
        match item {
            Pending::Nonterminal(a) => {
                let flat = draw(
                    table
                        .binary_logp
                        .index_axis(ndarray::Axis(0), a)
                        .iter()
                        .copied(),
                    rng,
                );
                let (b, cc) = (flat / c, flat % c);
                steps.push(Step::Binary(a));
                // right pushed first so left expands first
                for child in [cc, b] {
                    stack.push(if child < n_nt {
                        Pending::Nonterminal(child)
                    } else {
                        Pending::Preterminal(child - n_nt)
                    });
                }
            }
            Pending::Preterminal(t) => {
                let w = draw(table.preterm_logp.row(t).iter().copied(), rng);
                steps.push(Step::Leaf(t, w));
                leaves += 1;
            }
        }
        if leaves + stack.len() > max_length {
            return Ok(None);
        }
    }

    let mut tokens = Vec::new();
    let mut iter = steps.into_iter();
    fn rebuild(
        iter: &mut impl Iterator<Item = Step>,
        tokens: &mut Vec<usize>,
    ) -> TreeNode {
        match iter.next().expect("derivation is complete") {
            Step::Leaf(t, w) => {
                tokens.push(w);
                TreeNode::Leaf {
                    position: tokens.len() - 1,
                    preterminal: Some(t),
                }
            }
            Step::Binary(a) => {
                let start = tokens.len();
                let left = rebuild(iter, tokens);
                let split = tokens.len();
                let right = rebuild(iter, tokens);
                TreeNode::Internal {
                    start,
                    end: tokens.len(),
                    split,
                    symbol: Some(a),
                    left: Box::new(left),
                    right: Box::new(right),
                }
            }
        }
    }
    let root_node = rebuild(&mut iter, &mut tokens);
    let tree = ParseTree::new(tokens.len(), root_node)?;
    Ok(Some((Sentence::from_indices(tokens)?, tree)))
}

/// Ancestral top-down sampling of one sentence with its gold tree.
///
/// Returns `Ok(None)` for a rejected sample (longer than `max_length`).
pub fn sample_sentence(
    table: &RuleTable,
    max_length: usize,
    rng_seed: u64,
) -> Result<Option<(Sentence, ParseTree)>> {
    check_normalized(table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_with_rng(table, max_length, &mut rng)
}

/// Draws `count` accepted samples from one seeded stream, retrying rejections.
pub fn sample_corpus(
    table: &RuleTable,
    count: usize,
    max_length: usize,
    rng_seed: u64,
) -> Result<Vec<(Sentence, ParseTree)>> {
    check_normalized(table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * count.max(1) {
            return Err(Error::Contract(
                "grammar almost never yields sentences within the length limit".into(),
            ));
        }
        if let Some(sample) = sample_with_rng(table, max_length, &mut rng)? {
            out.push(sample);
        }
    }
    Ok(out)
}

fn check_normalized(table: &RuleTable) -> Result<()> {
    let shape = table.shape()?;
    let report = validate_grammar(table, &shape, ValidationMode::Normalized)?;
    if !report.passed {
        return Err(Error::Contract(format!(
            "sampling needs a normalized table (max error {:.3e} at {})",
            report.max_error(),
            report.worst.unwrap_or_default()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{tree_to_spans, GrammarShape, TrivialSpanPolicy};
    use ndarray::{Array1, Array2, Array3};

    /// p(S->A0)=1, p(A0->T0 T0)=1, p(T0->w0)=1.
    fn deterministic() -> RuleTable {
        let mut binary = Array3::from_elem((1, 2, 2), f64::NEG_INFINITY);
        binary[[0, 1, 1]] = 0.0;
        RuleTable {
            start_logp: Array1::zeros(1),
            binary_logp: binary,
            preterm_logp: Array2::zeros((1, 1)),
        }
    }

    #[test]
    fn deterministic_grammar_yields_two_tokens() {
        let (sentence, tree) = sample_sentence(&deterministic(), 10, 3).unwrap().unwrap();
        assert_eq!(sentence.tokens, vec![0, 0]);
        assert_eq!(tree.internal_nodes(), vec![((0, 2), 1, Some(0))]);
        assert!(tree_to_spans(&tree, TrivialSpanPolicy::Default).is_empty());
    }

    #[test]
    fn same_seed_same_sample() {
        let table = RuleTable::uniform(GrammarShape::new(2, 2, 3).unwrap());
        let a = sample_sentence(&table, 30, 11).unwrap();
        let b = sample_sentence(&table, 30, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn long_samples_are_rejected() {
        // A0 -> A0 T0 always: never terminates, must be rejected.
        let mut binary = Array3::from_elem((1, 2, 2), f64::NEG_INFINITY);
        binary[[0, 0, 1]] = 0.0;
        let table = RuleTable {
            start_logp: Array1::zeros(1),
            binary_logp: binary,
            preterm_logp: Array2::zeros((1, 1)),
        };
        assert_eq!(sample_sentence(&table, 8, 0).unwrap(), None);
    }

    #[test]
    fn unnormalized_table_violates_contract() {
        let mut table = deterministic();
        table.start_logp[0] = 1.0;
        assert!(matches!(sample_sentence(&table, 5, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn empirical_rule_frequencies_match() {
        // A0 -> T0 T0 with p=0.3, A0 -> T1 T1 with p=0.7.
        let mut binary = Array3::from_elem((1, 3, 3), f64::NEG_INFINITY);
        binary[[0, 1, 1]] = 0.3f64.ln();
        binary[[0, 2, 2]] = 0.7f64.ln();
        let table = RuleTable {
            start_logp: Array1::zeros(1),
            binary_logp: binary,
            preterm_logp: ndarray::array![[0.0, f64::NEG_INFINITY], [f64::NEG_INFINITY, 0.0]],
        };
        let corpus = sample_corpus(&table, 10_000, 5, 2024).unwrap();
        let first = corpus.iter().filter(|(s, _)| s.tokens[0] == 0).count();
        let freq = first as f64 / corpus.len() as f64;
        assert!((freq - 0.3).abs() < 0.02, "frequency {freq}");
    }

    #[test]
    fn sampled_trees_have_finite_probability() {
        let table = RuleTable::uniform(GrammarShape::new(2, 2, 3).unwrap());
        for (sentence, tree) in sample_corpus(&table, 50, 12, 5).unwrap() {
            assert!(table.tree_logp(&tree, &sentence).unwrap().is_finite());
        }
    }
}
