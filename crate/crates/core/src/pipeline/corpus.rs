//! Treebank and plain-text ingestion, length filtering and prediction files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::Prediction;
use crate::grammar::{parse_sexprs, LabeledTree, Sentence, SpanSet};
use crate::lexicon::Vocabulary;

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One gold-annotated sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreebankEntry {
    pub id: String,
    pub tokens: Vec<String>,
    /// Labeled spans of every phrasal node, width-1 and root spans included.
    pub gold: SpanSet,
    #[serde(skip)]
    pub tree: Option<LabeledTree>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Treebank {
    pub entries: Vec<TreebankEntry>,
    pub path: Option<PathBuf>,
}

impl Treebank {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn token_lists(&self) -> Vec<Vec<String>> {
        self.entries.iter().map(|e| e.tokens.clone()).collect()
    }

    pub fn trees(&self) -> Vec<LabeledTree> {
        self.entries.iter().filter_map(|e| e.tree.clone()).collect()
    }

    /// One bracketed tree per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            if let Some(t) = &e.tree {
                out.push_str(&t.to_brackets());
                out.push('\n');
            }
        }
        out
    }

    /// Builds entries from already clean trees, numbering them from 0.
    pub fn from_trees(trees: Vec<LabeledTree>) -> Result<Self> {
        let entries = trees
            .into_iter()
            .enumerate()
            .map(|(k, t)| entry(k.to_string(), t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries, path: None })
    }
}

/// Removes function tags and indices: `NP-SBJ-1` -> `NP`, `NP=2` -> `NP`.
/// Labels that start with `-` (`-NONE-`, `-LRB-`) are kept whole.
pub fn normalize_label(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    match label.find(['-', '=']) {
        Some(k) if k > 0 => &label[..k],
        _ => label,
    }
}

/// Strips tags, drops `-NONE-` leaves and any node left without children.
fn clean(tree: &LabeledTree) -> Option<LabeledTree> {
    match tree {
        LabeledTree::Word(w) => Some(LabeledTree::Word(w.clone())),
        LabeledTree::Node { label, children } => {
            if label == "-NONE-" {
                return None;
            }
            let children: Vec<LabeledTree> = children.iter().filter_map(clean).collect();
            if children.is_empty() {
                return None;
            }
            Some(LabeledTree::Node {
                label: normalize_label(label).to_string(),
                children,
            })
        }
    }
}

fn collect_spans(tree: &LabeledTree, start: usize, tokens: &mut Vec<String>, spans: &mut SpanSet) -> Result<usize> {
    match tree {
        LabeledTree::Word(w) => {
            tokens.push(w.clone());
            Ok(start + 1)
        }
        LabeledTree::Node { label, children } => {
            let mut end = start;
            for c in children {
                end = collect_spans(c, end, tokens, spans)?;
            }
            if !tree.is_preterminal() {
                spans.insert_labeled((start, end), label.clone());
            }
            Ok(end)
        }
    }
}

fn entry(id: String, tree: LabeledTree) -> Result<TreebankEntry> {
    let mut tokens = Vec::new();
    let mut gold = SpanSet::new();
    collect_spans(&tree, 0, &mut tokens, &mut gold)?;
    if tokens.is_empty() {
        return Err(Error::Validation {
            location: format!("tree {id}"),
            message: "tree has no tokens".into(),
        });
    }
    Ok(TreebankEntry {
        id,
        tokens,
        gold,
        tree: Some(tree),
    })
}

/// Parses bracketed trees, one per line or spread over several lines.
/// A label-less wrapper `( (S ...) )` is removed. Trees that contain only
/// empty elements are skipped.
pub fn parse_treebank(text: &str, source: &str) -> Result<Treebank> {
    let raw = parse_sexprs(text, source)?;
    if raw.is_empty() {
        return Err(Error::Empty(format!("{source}: no trees")));
    }
    let mut entries = Vec::with_capacity(raw.len());
    for (k, t) in raw.into_iter().enumerate() {
        let t = match t {
            LabeledTree::Node { label, mut children } if label.is_empty() && children.len() == 1 => children.remove(0),
            other => other,
        };
        let Some(t) = clean(&t) else {
            log::warn!("{source}: tree {k} has only empty elements, skipped");
            continue;
        };
        entries.push(entry(k.to_string(), t)?);
    }
    Ok(Treebank {
        entries,
        path: Some(PathBuf::from(source)),
    })
}

pub fn read_treebank(path: &Path) -> Result<Treebank> {
    let text = read_text(path)?;
    let mut tb = parse_treebank(&text, &path.display().to_string())?;
    tb.path = Some(path.to_path_buf());
    Ok(tb)
}

/// Whitespace-tokenized lines. Blank lines are skipped and counted.
pub fn parse_token_lines(text: &str) -> (Vec<Vec<String>>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for line in text.lines() {
        let toks: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if toks.is_empty() {
            skipped += 1;
        } else {
            out.push(toks);
        }
    }
    (out, skipped)
}

pub fn read_token_lines(path: &Path) -> Result<(Vec<Vec<String>>, usize)> {
    Ok(parse_token_lines(&read_text(path)?))
}

/// One sentence per non-empty line, out-of-vocabulary words mapped to `<unk>`.
pub fn read_plaintext(path: &Path, vocab: &Vocabulary) -> Result<(Vec<Sentence>, usize)> {
    let (lines, skipped) = read_token_lines(path)?;
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} empty lines", path.display());
    }
    let sentences = lines.iter().map(|l| vocab.encode(l)).collect::<Result<Vec<_>>>()?;
    Ok((sentences, skipped))
}

/// A corpus with gold trees when it was read from a treebank.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub ids: Vec<String>,
    pub tokens: Vec<Vec<String>>,
    pub treebank: Option<Treebank>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn from_treebank(tb: Treebank) -> Self {
        Self {
            ids: tb.entries.iter().map(|e| e.id.clone()).collect(),
            tokens: tb.token_lists(),
            treebank: Some(tb),
        }
    }

    /// Plain sentences numbered from 0 in file order.
    pub fn from_tokens(tokens: Vec<Vec<String>>) -> Self {
        Self {
            ids: (0..tokens.len()).map(|k| k.to_string()).collect(),
            tokens,
            treebank: None,
        }
    }

    /// Keeps the sentences with fewer than `threshold` tokens.
    pub fn filter_by_length(self, threshold: f64) -> Self {
        let keep: Vec<bool> = self.tokens.iter().map(|t| (t.len() as f64) < threshold).collect();
        fn pick<T>(v: Vec<T>, keep: &[bool]) -> Vec<T> {
            v.into_iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| x).collect()
        }
        let treebank = self.treebank.map(|tb| Treebank {
            entries: pick(tb.entries, &keep),
            path: tb.path,
        });
        let out = Self {
            ids: pick(self.ids, &keep),
            tokens: pick(self.tokens, &keep),
            treebank,
        };
        if out.is_empty() {
            log::warn!("length filter below {threshold} removed every sentence");
        }
        out
    }
}

/// Reads a treebank if the file starts with `(`, plain text otherwise.
pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let text = read_text(path)?;
    let source = path.display().to_string();
    if text.trim_start().starts_with('(') {
        let mut tb = parse_treebank(&text, &source)?;
        tb.path = Some(path.to_path_buf());
        Ok(Corpus::from_treebank(tb))
    } else {
        let (tokens, skipped) = parse_token_lines(&text);
        if skipped > 0 {
            log::warn!("{source}: skipped {skipped} empty lines");
        }
        if tokens.is_empty() {
            return Err(Error::Empty(format!("{source}: no sentences")));
        }
        Ok(Corpus::from_tokens(tokens))
    }
}

/// Anything with a token count.
pub trait TokenCount {
    fn token_count(&self) -> usize;
}

impl TokenCount for Sentence {
    fn token_count(&self) -> usize {
        self.len()
    }
}

impl TokenCount for TreebankEntry {
    fn token_count(&self) -> usize {
        self.tokens.len()
    }
}

impl<S> TokenCount for Vec<S> {
    fn token_count(&self) -> usize {
        self.len()
    }
}

/// Keeps items with strictly fewer than `threshold` tokens.
pub fn filter_by_length<T: TokenCount + Clone>(items: &[T], threshold: f64) -> Vec<T> {
    let out: Vec<T> = items.iter().filter(|x| (x.token_count() as f64) < threshold).cloned().collect();
    if out.is_empty() && !items.is_empty() {
        log::warn!("length filter below {threshold} removed every item");
    }
    out
}

pub fn predictions_to_jsonl(predictions: &[Prediction]) -> Result<String> {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_predictions(text: &str, source: &str) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(line).map_err(|e| Error::parse(source, k + 1, e.to_string()))?;
        out.push(p);
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    parse_predictions(&read_text(path)?, &path.display().to_string())
}
