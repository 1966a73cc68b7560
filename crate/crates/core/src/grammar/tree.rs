use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::sexpr::{parse_sexprs, LabeledTree};
use crate::error::{Error, Result};

/// Half-open token interval `[start, end)`.
pub type Span = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeNode {
    Leaf {
        position: usize,
        preterminal: Option<usize>,
    },
    Internal {
        start: usize,
        end: usize,
        split: usize,
        symbol: Option<usize>,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn span(&self) -> Span {
        match self {
            TreeNode::Leaf { position, .. } => (*position, position + 1),
            TreeNode::Internal { start, end, .. } => (*start, *end),
        }
    }

    fn check(&self) -> Result<usize> {
        match self {
            TreeNode::Leaf { .. } => Ok(0),
            TreeNode::Internal {
                start,
                end,
                split,
                left,
                right,
                ..
            } => {
                if !(start < split && split < end) {
                    return Err(Error::Structural(format!(
                        "split {split} outside span ({start}, {end})"
                    )));
                }
                if left.span() != (*start, *split) || right.span() != (*split, *end) {
                    return Err(Error::Structural(format!(
                        "children {:?} and {:?} do not tile ({start}, {end}) at {split}",
                        left.span(),
                        right.span()
                    )));
                }
                Ok(1 + left.check()? + right.check()?)
            }
        }
    }
}

/// A binary constituency tree over `length` tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    length: usize,
    root: TreeNode,
}

impl ParseTree {
    pub fn new(length: usize, root: TreeNode) -> Result<Self> {
        if length == 0 {
            return Err(Error::Degenerate("tree over zero tokens".into()));
        }
        if root.span() != (0, length) {
            return Err(Error::Structural(format!(
                "root span {:?} does not cover (0, {length})",
                root.span()
            )));
        }
        let internal = root.check()?;
        debug_assert_eq!(internal, length - 1);
        Ok(Self { length, root })
    }

    /// Builds a tree top-down; `choose(i, j)` returns the split point and
    /// symbol for span `(i, j)`, `leaf(i)` the preterminal at position `i`.
    pub fn build<F, L>(length: usize, mut choose: F, mut leaf: L) -> Result<Self>
    where
        F: FnMut(usize, usize) -> (usize, Option<usize>),
        L: FnMut(usize) -> Option<usize>,
    {
        fn go<F, L>(i: usize, j: usize, choose: &mut F, leaf: &mut L) -> Result<TreeNode>
        where
            F: FnMut(usize, usize) -> (usize, Option<usize>),
            L: FnMut(usize) -> Option<usize>,
        {
            if j == i + 1 {
                return Ok(TreeNode::Leaf {
                    position: i,
                    preterminal: leaf(i),
                });
            }
            let (k, symbol) = choose(i, j);
            if !(i < k && k < j) {
                return Err(Error::Structural(format!("split {k} outside span ({i}, {j})")));
            }
            let left = go(i, k, choose, leaf)?;
            let right = go(k, j, choose, leaf)?;
            Ok(TreeNode::Internal {
                start: i,
                end: j,
                split: k,
                symbol,
                left: Box::new(left),
                right: Box::new(right),
            })
        }
        if length == 0 {
            return Err(Error::Degenerate("tree over zero tokens".into()));
        }
        let root = go(0, length, &mut choose, &mut leaf)?;
        Self::new(length, root)
    }

    /// Single-preterminal-leaf tree used for one-token sentences.
    pub fn single_leaf(preterminal: Option<usize>) -> Self {
        Self {
            length: 1,
            root: TreeNode::Leaf {
                position: 0,
                preterminal,
            },
        }
    }

    pub fn right_branching(length: usize) -> Result<Self> {
        Self::build(length, |i, _| (i + 1, None), |_| None)
    }

    pub fn left_branching(length: usize) -> Result<Self> {
        Self::build(length, |_, j| (j - 1, None), |_| None)
    }

    /// Reconstructs a binary tree from the set of its width>=2 spans (root
    /// span optional). Fails if the spans do not form a complete binary bracketing.
    pub fn from_spans(length: usize, spans: &SpanSet) -> Result<Self> {
        let mut failed = None;
        let tree = Self::build(
            length,
            |i, j| {
                let split = (i + 1..j).find(|&k| {
                    (k - i < 2 || spans.contains((i, k))) && (j - k < 2 || spans.contains((k, j)))
                });
                match split {
                    Some(k) => (k, None),
                    None => {
                        failed = Some((i, j));
                        (i + 1, None)
                    }
                }
            },
            |_| None,
        )?;
        if let Some(span) = failed {
            return Err(Error::Structural(format!(
                "span set has no binary split for {span:?}"
            )));
        }
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    /// Internal nodes in pre-order as `(span, split, symbol)`.
    pub fn internal_nodes(&self) -> Vec<(Span, usize, Option<usize>)> {
        let mut out = Vec::with_capacity(self.length.saturating_sub(1));
        let mut stack = vec![&self.root];
        while let Some(node) = stack.pop() {
            if let TreeNode::Internal {
                start,
                end,
                split,
                symbol,
                left,
                right,
            } = node
            {
                out.push(((*start, *end), *split, *symbol));
                stack.push(right);
                stack.push(left);
            }
        }
        out
    }

    /// Leaf preterminals in order.
    pub fn leaf_preterminals(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.length];
        let mut stack = vec![&self.root];
        while let Some(node) = stack.pop() {
            match node {
                TreeNode::Leaf {
                    position,
                    preterminal,
                } => out[*position] = *preterminal,
                TreeNode::Internal { left, right, .. } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        out
    }

    /// Serializes as `(A0 (T1 word) (A2 ...))`; unlabeled nodes print as `X`/`T`.
    pub fn to_brackets<S: AsRef<str>>(&self, words: &[S]) -> Result<String> {
        if words.len() != self.length {
            return Err(Error::Structural(format!(
                "{} words for a tree over {} tokens",
                words.len(),
                self.length
            )));
        }
        fn go<S: AsRef<str>>(node: &TreeNode, words: &[S], out: &mut String) {
            match node {
                TreeNode::Leaf {
                    position,
                    preterminal,
                } => {
                    out.push('(');
                    match preterminal {
                        Some(t) => out.push_str(&format!("T{t}")),
                        None => out.push('T'),
                    }
                    out.push(' ');
                    out.push_str(words[*position].as_ref());
                    out.push(')');
                }
                TreeNode::Internal {
                    symbol, left, right, ..
                } => {
                    out.push('(');
                    match symbol {
                        Some(a) => out.push_str(&format!("A{a}")),
                        None => out.push('X'),
                    }
                    out.push(' ');
                    go(left, words, out);
                    out.push(' ');
                    go(right, words, out);
                    out.push(')');
                }
            }
        }
        let mut out = String::new();
        go(&self.root, words, &mut out);
        Ok(out)
    }

    /// Parses one binary bracketed tree, returning it with its yield.
    pub fn from_brackets(text: &str) -> Result<(Self, Vec<String>)> {
        let mut trees = parse_sexprs(text, "<brackets>")?;
        if trees.len() != 1 {
            return Err(Error::Structural(format!(
                "expected exactly one tree, found {}",
                trees.len()
            )));
        }
        let tree = trees.pop().expect("one tree");
        let mut words = Vec::new();
        let root = from_labeled(&tree, &mut words)?;
        Ok((Self::new(words.len(), root)?, words))
    }
}

fn parse_symbol(label: &str, prefix: char) -> Option<usize> {
    label.strip_prefix(prefix).and_then(|rest| rest.parse().ok())
}

fn from_labeled(tree: &LabeledTree, words: &mut Vec<String>) -> Result<TreeNode> {
    match tree {
        LabeledTree::Word(w) => Err(Error::Structural(format!("bare word {w:?} without a preterminal"))),
        LabeledTree::Node { label, children } => match children.as_slice() {
            [LabeledTree::Word(w)] => {
                words.push(w.clone());
                Ok(TreeNode::Leaf {
                    position: words.len() - 1,
                    preterminal: parse_symbol(label, 'T'),
                })
            }
            [l, r] => {
                let start = words.len();
                let left = from_labeled(l, words)?;
                let split = words.len();
                let right = from_labeled(r, words)?;
                Ok(TreeNode::Internal {
                    start,
                    end: words.len(),
                    split,
                    symbol: parse_symbol(label, 'A'),
                    left: Box::new(left),
                    right: Box::new(right),
                })
            }
            other => Err(Error::Structural(format!(
                "node {label:?} has {} children; binary trees only",
                other.len()
            ))),
        },
    }
}

/// Which spans are dropped when a tree is turned into a [`SpanSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrivialSpanPolicy {
    /// Drop the whole-sentence span and all width-1 spans.
    #[default]
    Default,
    /// Drop only width-1 spans.
    KeepRoot,
}

impl TrivialSpanPolicy {
    pub fn keeps(&self, span: Span, length: usize) -> bool {
        let wide = span.1 >= span.0 + 2;
        match self {
            TrivialSpanPolicy::Default => wide && span != (0, length),
            TrivialSpanPolicy::KeepRoot => wide,
        }
    }
}

/// Unlabeled span view of a tree, with optional labels per span.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanSet {
    spans: BTreeSet<Span>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty", with = "label_pairs")]
    labels: BTreeMap<Span, Vec<String>>,
}

/// JSON object keys must be strings, so labels travel as `[span, labels]` pairs.
mod label_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serializer};

    use super::Span;

    pub fn serialize<S: Serializer>(map: &BTreeMap<Span, Vec<String>>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Span, Vec<String>>, D::Error> {
        Ok(Vec::<(Span, Vec<String>)>::deserialize(d)?.into_iter().collect())
    }
}

impl SpanSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, span: Span) -> bool {
        self.spans.insert(span)
    }

    pub fn insert_labeled(&mut self, span: Span, label: impl Into<String>) {
        self.spans.insert(span);
        self.labels.entry(span).or_default().push(label.into());
    }

    pub fn contains(&self, span: Span) -> bool {
        self.spans.contains(&span)
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Span> + '_ {
        self.spans.iter().copied()
    }

    pub fn labels(&self, span: Span) -> &[String] {
        self.labels.get(&span).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn intersection_count(&self, other: &SpanSet) -> usize {
        self.spans.intersection(&other.spans).count()
    }

    /// Drops spans rejected by `policy` for a sentence of `length` tokens.
    pub fn filtered(&self, policy: TrivialSpanPolicy, length: usize) -> SpanSet {
        let spans: BTreeSet<Span> = self
            .spans
            .iter()
            .copied()
            .filter(|&s| policy.keeps(s, length))
            .collect();
        let labels = self
            .labels
            .iter()
            .filter(|(s, _)| spans.contains(s))
            .map(|(s, l)| (*s, l.clone()))
            .collect();
        SpanSet { spans, labels }
    }

    pub fn max_end(&self) -> usize {
        self.spans.iter().map(|s| s.1).max().unwrap_or(0)
    }

    pub fn check_bounds(&self, length: usize) -> Result<()> {
        match self.spans.iter().find(|(i, j)| i >= j || *j > length) {
            Some(span) => Err(Error::Structural(format!(
                "span {span:?} outside a sentence of length {length}"
            ))),
            None => Ok(()),
        }
    }
}

impl FromIterator<Span> for SpanSet {
    fn from_iter<I: IntoIterator<Item = Span>>(iter: I) -> Self {
        SpanSet {
            spans: iter.into_iter().collect(),
            labels: BTreeMap::new(),
        }
    }
}

/// Spans of the internal nodes of `tree` that survive `policy`.
pub fn tree_to_spans(tree: &ParseTree, policy: TrivialSpanPolicy) -> SpanSet {
    tree.internal_nodes()
        .into_iter()
        .map(|(span, _, _)| span)
        .filter(|&s| policy.keeps(s, tree.len()))
        .collect()
}
