use crate::error::{Error, Result};
use crate::grammar::{ParseTree, RuleTable, Sentence, TreeNode};
use crate::logspace::logsumexp;

/// Default enumeration guard: Catalan(7) = 429 bracketings.
pub const BRUTE_FORCE_MAX_N: usize = 8;

/// Every binary bracketing of `n` tokens (Catalan(n-1) of them), unlabeled.
pub fn enumerate_bracketings(n: usize) -> Vec<ParseTree> {
    fn go(i: usize, j: usize) -> Vec<TreeNode> {
        if j == i + 1 {
            return vec![TreeNode::Leaf {
                position: i,
                preterminal: None,
            }];
        }
        let mut out = Vec::new();
        for k in i + 1..j {
            let lefts = go(i, k);
            let rights = go(k, j);
            for l in &lefts {
                for r in &rights {
                    out.push(TreeNode::Internal {
                        start: i,
                        end: j,
                        split: k,
                        symbol: None,
                        left: Box::new(l.clone()),
                        right: Box::new(r.clone()),
                    });
                }
            }
        }
        out
    }
    if n == 0 {
        return Vec::new();
    }
    go(0, n)
        .into_iter()
        .map(|root| ParseTree::new(n, root).expect("enumerated trees are well formed"))
        .collect()
}

/// Per-symbol scores of a fixed bracketing over the combined alphabet, with
/// the symbol choices that realize each maximum when `max` is set.
pub(crate) fn node_scores(table: &RuleTable, tokens: &[usize], node: &TreeNode, max: bool) -> (Vec<f64>, Vec<TreeNode>) {
    let n_nt = table.start_logp.len();
    let n_pt = table.preterm_logp.nrows();
    let c = n_nt + n_pt;
    match node {
        TreeNode::Leaf { position, .. } => {
            let mut scores = vec![f64::NEG_INFINITY; c];
            let mut best = Vec::with_capacity(c);
            for x in 0..c {
                best.push(TreeNode::Leaf {
                    position: *position,
                    preterminal: (x >= n_nt).then(|| x - n_nt),
                });
                if x >= n_nt {
                    scores[x] = table.preterm_logp[[x - n_nt, tokens[*position]]];
                }
            }
            (scores, best)
        }
        TreeNode::Internal {
            start,
            end,
            split,
            left,
            right,
            ..
        } => {
            let (ls, lb) = node_scores(table, tokens, left, max);
            let (rs, rb) = node_scores(table, tokens, right, max);
            let mut scores = vec![f64::NEG_INFINITY; c];
            let mut best = Vec::with_capacity(c);
            for a in 0..c {
                let mut arg = (0, 0);
                if a < n_nt {
                    let mut terms = Vec::with_capacity(c * c);
                    let mut top = f64::NEG_INFINITY;
                    for b in 0..c {
                        for cc in 0..c {
                            let v = table.binary_logp[[a, b, cc]] + ls[b] + rs[cc];
                            terms.push(v);
                            if v > top {
                                top = v;
                                arg = (b, cc);
                            }
                        }
                    }
                    scores[a] = if max { top } else { logsumexp(terms) };
                }
                best.push(TreeNode::Internal {
                    start: *start,
                    end: *end,
                    split: *split,
                    symbol: (a < n_nt).then_some(a),
                    left: Box::new(lb[arg.0].clone()),
                    right: Box::new(rb[arg.1].clone()),
                });
            }
            (scores, best)
        }
    }
}

fn check(table: &RuleTable, sentence: &Sentence, max_n: usize) -> Result<()> {
    if sentence.len() < 2 {
        return Err(Error::Degenerate("brute force needs at least 2 tokens".into()));
    }
    if sentence.len() > max_n {
        return Err(Error::Refused(format!(
            "sentence of {} tokens exceeds the enumeration limit {max_n}",
            sentence.len()
        )));
    }
    sentence.check_vocab(table.preterm_logp.ncols())
}

/// `log p(w)` by explicit enumeration of every bracketing; within each
/// bracketing the symbol assignments are summed exactly over the fixed tree.
pub fn brute_force_marginal(table: &RuleTable, sentence: &Sentence, max_n: usize) -> Result<f64> {
    check(table, sentence, max_n)?;
    let n_nt = table.start_logp.len();
    let per_tree: Vec<f64> = enumerate_bracketings(sentence.len())
        .iter()
        .map(|tree| {
            let (scores, _) = node_scores(table, &sentence.tokens, tree.root(), false);
            logsumexp((0..n_nt).map(|a| table.start_logp[a] + scores[a]).collect::<Vec<_>>())
        })
        .collect();
    Ok(logsumexp(per_tree))
}

/// Highest-probability labeled tree by enumeration.
pub fn brute_force_best(table: &RuleTable, sentence: &Sentence, max_n: usize) -> Result<(ParseTree, f64)> {
    check(table, sentence, max_n)?;
    let n_nt = table.start_logp.len();
    let mut best: Option<(TreeNode, f64)> = None;
    for tree in enumerate_bracketings(sentence.len()) {
        let (scores, nodes) = node_scores(table, &sentence.tokens, tree.root(), true);
        for a in 0..n_nt {
            let v = table.start_logp[a] + scores[a];
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((nodes[a].clone(), v));
            }
        }
    }
    let (root, v) = best.expect("at least one bracketing");
    if v == f64::NEG_INFINITY {
        return Err(Error::NoParse);
    }
    Ok((ParseTree::new(sentence.len(), root)?, v))
}
