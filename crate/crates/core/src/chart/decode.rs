use super::{check_input, PosteriorTable};
use crate::error::{Error, Result};
use crate::grammar::{ParseTree, RuleTable, Sentence};

/// Minimum-Bayes-risk span decoding: the binary tree maximizing the summed
/// posterior of its spans. Ties go to the smallest split point.
pub fn mbr_decode(posteriors: &PosteriorTable) -> Result<ParseTree> {
    let n = posteriors.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("MBR decoding needs n >= 2, got {n}")));
    }
    let idx = |i: usize, j: usize| i * (n + 1) + j;
    let mut best = vec![0.0f64; (n + 1) * (n + 1)];
    let mut split = vec![0usize; (n + 1) * (n + 1)];
    for w in 2..=n {
        for i in 0..=n - w {
            let j = i + w;
            let mut arg = i + 1;
            let mut val = f64::NEG_INFINITY;
            for k in i + 1..j {
                let v = best[idx(i, k)] + best[idx(k, j)];
                if v > val {
                    val = v;
                    arg = k;
                }
            }
            let p = posteriors.get(i, j);
            if !p.is_finite() {
                return Err(Error::Structural(format!("non-finite posterior at ({i}, {j})")));
            }
            best[idx(i, j)] = p + val;
            split[idx(i, j)] = arg;
        }
    }
    ParseTree::build(n, |i, j| (split[idx(i, j)], None), |_| None)
}

/// Max-product decoding. Ties go to the smallest split, then the smallest
/// symbol indices.
pub fn viterbi_decode(table: &RuleTable, sentence: &Sentence) -> Result<(ParseTree, f64)> {
    check_input(table, sentence)?;
    let shape = table.shape()?;
    let (n_nt, n_pt) = (shape.num_nonterminals, shape.num_preterminals);
    let n = sentence.len();
    let k = n_nt.max(n_pt);
    let cell = |i: usize, j: usize, s: usize| (i * (n + 1) + j) * k + s;
    let mut delta = vec![f64::NEG_INFINITY; (n + 1) * (n + 1) * k];
    // (split, left child symbol, right child symbol) in the combined alphabet
    let mut back = vec![(0usize, 0usize, 0usize); (n + 1) * (n + 1) * k];

    for (i, &w) in sentence.tokens.iter().enumerate() {
        for t in 0..n_pt {
            delta[cell(i, i + 1, t)] = table.preterm_logp[[t, w]];
        }
    }
    let range = |width: usize| if width == 1 { (n_nt, n_pt) } else { (0, n_nt) };
    for w in 2..=n {
        for i in 0..=n - w {
            let j = i + w;
            for a in 0..n_nt {
                let mut best = f64::NEG_INFINITY;
                let mut arg = (0, 0, 0);
                for s in i + 1..j {
                    let (loff, lcount) = range(s - i);
                    let (roff, rcount) = range(j - s);
                    for b in 0..lcount {
                        let lb = delta[cell(i, s, b)];
                        if lb == f64::NEG_INFINITY {
                            continue;
                        }
                        for cc in 0..rcount {
                            let rc = delta[cell(s, j, cc)];
                            let v = table.binary_logp[[a, loff + b, roff + cc]] + lb + rc;
                            if v > best {
                                best = v;
                                arg = (s, loff + b, roff + cc);
                            }
                        }
                    }
                }
                delta[cell(i, j, a)] = best;
                back[cell(i, j, a)] = arg;
            }
        }
    }

    let mut root = 0;
    let mut best = f64::NEG_INFINITY;
    for a in 0..n_nt {
        let v = table.start_logp[a] + delta[cell(0, n, a)];
        if v > best {
            best = v;
            root = a;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::NoParse);
    }

    let idx = |i: usize, j: usize| i * (n + 1) + j;
    let mut node_at = vec![(0usize, None); (n + 1) * (n + 1)];
    let mut leaves = vec![None; n];
    let mut stack = vec![(0, n, root)];
    while let Some((i, j, a)) = stack.pop() {
        let (s, b, cc) = back[cell(i, j, a)];
        node_at[idx(i, j)] = (s, Some(a));
        for (lo, hi, x) in [(i, s, b), (s, j, cc)] {
            if hi - lo == 1 {
                leaves[lo] = Some(x - n_nt);
            } else {
                stack.push((lo, hi, x));
            }
        }
    }
    let tree = ParseTree::build(n, |i, j| node_at[idx(i, j)], |i| leaves[i])?;
    Ok((tree, best))
}
