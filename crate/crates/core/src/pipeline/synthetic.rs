//! Seeded synthetic grammars and corpora with gold trees and image vectors.

use ndarray::{Array1, Array2, Array3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::corpus::Treebank;
use crate::error::{Error, Result};
use crate::grammar::{sample_corpus, LabeledTree, ParseTree, RuleTable, TreeNode};
use crate::grounding::ImageVector;

/// Shape of a sparse random grammar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticGrammar {
    pub num_nonterminals: usize,
    pub num_preterminals: usize,
    /// Each preterminal emits its own disjoint set of words.
    pub words_per_preterminal: usize,
    /// Binary rules per nonterminal; the first one always has two
    /// preterminal children so every derivation can terminate.
    pub rules_per_nonterminal: usize,
    pub seed: u64,
}

impl Default for SyntheticGrammar {
    fn default() -> Self {
        Self {
            num_nonterminals: 3,
            num_preterminals: 4,
            words_per_preterminal: 5,
            rules_per_nonterminal: 3,
            seed: 0,
        }
    }
}

impl SyntheticGrammar {
    pub fn vocab_size(&self) -> usize {
        self.num_preterminals * self.words_per_preterminal
    }

    /// Word `k` of preterminal `t` is `w{t}_{k}`.
    pub fn words(&self) -> Vec<String> {
        (0..self.num_preterminals)
            .flat_map(|t| (0..self.words_per_preterminal).map(move |k| format!("w{t}_{k}")))
            .collect()
    }

    pub fn build(&self) -> Result<RuleTable> {
        let (n, p, k) = (self.num_nonterminals, self.num_preterminals, self.words_per_preterminal);
        let c = n + p;
        if n == 0 || p == 0 || k == 0 {
            return Err(Error::Config("synthetic grammar needs nonterminals, preterminals and words".into()));
        }
        if self.rules_per_nonterminal == 0 || self.rules_per_nonterminal > c * c {
            return Err(Error::Config(format!(
                "rules_per_nonterminal must be in 1..={}",
                c * c
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let weight = |rng: &mut ChaCha8Rng| rng.random_range(0.5f64..1.5).ln();

        let start = Array1::from_shape_fn(n, |_| weight(&mut rng));
        let mut binary = Array3::from_elem((n, c, c), f64::NEG_INFINITY);
        for a in 0..n {
            let b = n + rng.random_range(0..p);
            let cc = n + rng.random_range(0..p);
            binary[[a, b, cc]] = weight(&mut rng);
            let mut placed = 1;
            for flat in sample(&mut rng, c * c, c * c).into_iter() {
                if placed == self.rules_per_nonterminal {
                    break;
                }
                let (b, cc) = (flat / c, flat % c);
                if binary[[a, b, cc]].is_finite() {
                    continue;
                }
                binary[[a, b, cc]] = weight(&mut rng);
                placed += 1;
            }
        }
        let mut preterm = Array2::from_elem((p, p * k), f64::NEG_INFINITY);
        for t in 0..p {
            for j in 0..k {
                preterm[[t, t * k + j]] = weight(&mut rng);
            }
        }
        let mut table = RuleTable::from_scores(start, binary, preterm);
        table.normalize();
        Ok(table)
    }
}

/// Labeled tree with `A{a}` / `T{t}` labels over the given words.
pub fn labeled_tree(tree: &ParseTree, words: &[String]) -> LabeledTree {
    fn go(node: &TreeNode, words: &[String]) -> LabeledTree {
        match node {
            TreeNode::Leaf { position, preterminal } => LabeledTree::Node {
                label: preterminal.map_or("T".to_string(), |t| format!("T{t}")),
                children: vec![LabeledTree::Word(words[*position].clone())],
            },
            TreeNode::Internal {
                symbol, left, right, ..
            } => LabeledTree::Node {
                label: symbol.map_or("X".to_string(), |a| format!("A{a}")),
                children: vec![go(left, words), go(right, words)],
            },
        }
    }
    go(tree.root(), words)
}

/// Samples `count` sentences with between `min_length` and `max_length`
/// tokens, returned as a treebank with ids `0..count`.
pub fn sample_treebank(
    grammar: &SyntheticGrammar,
    count: usize,
    min_length: usize,
    max_length: usize,
    seed: u64,
) -> Result<(Treebank, Vec<ParseTree>)> {
    let table = grammar.build()?;
    let vocab = grammar.words();
    let mut trees = Vec::with_capacity(count);
    let mut labeled = Vec::with_capacity(count);
    let mut round = 0u64;
    while trees.len() < count {
        let need = count - trees.len();
        let batch = sample_corpus(&table, need, max_length, seed.wrapping_add(round.wrapping_mul(0x9E37_79B9)))?;
        round += 1;
        if round > 1000 {
            return Err(Error::Contract("grammar rarely yields sentences in the length range".into()));
        }
        for (sentence, tree) in batch {
            if sentence.len() < min_length {
                continue;
            }
            let words: Vec<String> = sentence.tokens.iter().map(|&w| vocab[w].clone()).collect();
            labeled.push(labeled_tree(&tree, &words));
            trees.push(tree);
        }
    }
    Ok((Treebank::from_trees(labeled)?, trees))
}

/// Image vector per tree: counts of each nonterminal in the gold tree plus
/// Gaussian noise with standard deviation `noise`.
pub fn nonterminal_images(trees: &[ParseTree], num_nonterminals: usize, noise: f64, seed: u64) -> Result<Vec<ImageVector>> {
    let dist = Normal::new(0.0, noise).map_err(|e| Error::Config(format!("noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(trees
        .iter()
        .enumerate()
        .map(|(k, tree)| {
            let mut v = vec![0.0; num_nonterminals];
            for (_, _, sym) in tree.internal_nodes() {
                if let Some(a) = sym {
                    v[a] += 1.0;
                }
            }
            for x in v.iter_mut() {
                *x += dist.sample(&mut rng);
            }
            ImageVector {
                id: k.to_string(),
                values: v,
            }
        })
        .collect())
}

/// Image vector per sentence over the vocabulary: every nonterminal
/// occurrence of the gold tree adds the indicator of the words it covers,
/// so a word's entry counts the constituents containing it. Gaussian noise
/// with standard deviation `noise` is added.
pub fn constituent_images(
    trees: &[ParseTree],
    tokens: &[Vec<usize>],
    vocab_size: usize,
    noise: f64,
    seed: u64,
) -> Result<Vec<ImageVector>> {
    if trees.len() != tokens.len() {
        return Err(Error::Structural("trees and sentences differ in number".into()));
    }
    let dist = Normal::new(0.0, noise).map_err(|e| Error::Config(format!("noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trees.len());
    for (k, (tree, toks)) in trees.iter().zip(tokens).enumerate() {
        let mut v = vec![0.0; vocab_size];
        for ((i, j), _, _) in tree.internal_nodes() {
            for &w in &toks[i..j] {
                if w >= vocab_size {
                    return Err(Error::Structural(format!("word index {w} outside the vocabulary")));
                }
                v[w] += 1.0;
            }
        }
        for x in v.iter_mut() {
            *x += dist.sample(&mut rng);
        }
        out.push(ImageVector {
            id: k.to_string(),
            values: v,
        });
    }
    Ok(out)
}
