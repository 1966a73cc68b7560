//! Vocabularies, pre-trained embedding ingestion, test-time embedding
//! selection, and unknown-word statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::Sentence;

pub const UNK: &str = "<unk>";
pub const DEFAULT_SIZE_CAP: usize = 10_000;
/// Half-width of the uniform distribution for randomly initialized rows.
pub const RANDOM_INIT_RANGE: f64 = 0.1;

/// Frequency-ranked word list with `<unk>` as the last entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyData", into = "VocabularyData")]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, usize>,
    size_cap: usize,
    lowercase: bool,
}

#[derive(Serialize, Deserialize)]
struct VocabularyData {
    words: Vec<String>,
    counts: Vec<usize>,
    size_cap: usize,
    lowercase: bool,
}

impl From<Vocabulary> for VocabularyData {
    fn from(v: Vocabulary) -> Self {
        Self {
            words: v.words,
            counts: v.counts,
            size_cap: v.size_cap,
            lowercase: v.lowercase,
        }
    }
}

impl TryFrom<VocabularyData> for Vocabulary {
    type Error = Error;

    fn try_from(d: VocabularyData) -> Result<Self> {
        Vocabulary::from_parts(d.words, d.counts, d.size_cap, d.lowercase)
    }
}

impl Vocabulary {
    fn from_parts(words: Vec<String>, counts: Vec<usize>, size_cap: usize, lowercase: bool) -> Result<Self> {
        if words.last().map(String::as_str) != Some(UNK) || words.len() != counts.len() {
            return Err(Error::Structural("vocabulary must end with <unk> and carry one count per word".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Structural(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(Self {
            words,
            counts,
            index,
            size_cap,
            lowercase,
        })
    }

    /// A vocabulary over an explicit word list (counts zero), `<unk>` appended.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list: Vec<String> = words.into_iter().map(Into::into).filter(|w| w != UNK).collect();
        let cap = list.len();
        list.push(UNK.to_string());
        let counts = vec![0; list.len()];
        Self::from_parts(list, counts, cap, false)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn unk_index(&self) -> usize {
        self.words.len() - 1
    }

    pub fn size_cap(&self) -> usize {
        self.size_cap
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn count(&self, index: usize) -> usize {
        self.counts[index]
    }

    fn key<'a>(&self, word: &'a str) -> std::borrow::Cow<'a, str> {
        if self.lowercase {
            std::borrow::Cow::Owned(word.to_lowercase())
        } else {
            std::borrow::Cow::Borrowed(word)
        }
    }

    /// Index of a known word; `<unk>` itself is not a known word.
    pub fn get(&self, word: &str) -> Option<usize> {
        let key = self.key(word);
        if key == UNK {
            return None;
        }
        self.index.get(key.as_ref()).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.get(word).is_some()
    }

    pub fn index_or_unk(&self, word: &str) -> usize {
        self.get(word).unwrap_or_else(|| self.unk_index())
    }

    /// Maps raw tokens to indices, out-of-vocabulary tokens to `<unk>`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Sentence> {
        Sentence::new(
            tokens.iter().map(|t| self.index_or_unk(t.as_ref())).collect(),
            tokens.iter().map(|t| t.as_ref().to_string()).collect(),
        )
    }

    /// `word<TAB>index<TAB>count` lines.
    pub fn to_dump(&self) -> String {
        let mut out = String::new();
        for (i, (w, c)) in self.words.iter().zip(&self.counts).enumerate() {
            out.push_str(&format!("{w}\t{i}\t{c}\n"));
        }
        out
    }

    pub fn from_dump(text: &str, source: &str) -> Result<Self> {
        let mut words = Vec::new();
        let mut counts = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |m: &str| Error::parse(source, lineno + 1, m.to_string());
            if fields.len() != 3 {
                return Err(bad("expected word<TAB>index<TAB>count"));
            }
            let idx: usize = fields[1].parse().map_err(|_| bad("bad index"))?;
            if idx != words.len() {
                return Err(bad("indices must be dense and in order"));
            }
            words.push(fields[0].to_string());
            counts.push(fields[2].parse().map_err(|_| bad("bad count"))?);
        }
        let cap = words.len().saturating_sub(1);
        Self::from_parts(words, counts, cap, false)
    }
}

/// Keeps the `size_cap` most frequent words (ties broken lexicographically)
/// and appends `<unk>`, whose count is the number of dropped tokens.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[Vec<S>], size_cap: usize, lowercase: bool) -> Result<Vocabulary> {
    let mut freq: HashMap<String, usize> = HashMap::new();
    let mut total = 0usize;
    for sent in corpus {
        for tok in sent {
            let t = tok.as_ref();
            let key = if lowercase { t.to_lowercase() } else { t.to_string() };
            *freq.entry(key).or_insert(0) += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("cannot build a vocabulary from an empty corpus".into()));
    }
    let literal_unk = freq.remove(UNK).unwrap_or(0);
    let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let dropped: usize = ranked.iter().skip(size_cap).map(|(_, c)| c).sum();
    ranked.truncate(size_cap);
    let mut words: Vec<String> = ranked.iter().map(|(w, _)| w.clone()).collect();
    let mut counts: Vec<usize> = ranked.iter().map(|(_, c)| *c).collect();
    words.push(UNK.to_string());
    counts.push(dropped + literal_unk);
    Vocabulary::from_parts(words, counts, size_cap, lowercase)
}

/// Word vectors read from a `word v1 ... vd` text file.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedEmbeddings {
    pub dim: usize,
    pub words: Vec<String>,
    vectors: HashMap<String, Vec<f64>>,
}

impl PretrainedEmbeddings {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            words: Vec::new(),
            vectors: HashMap::new(),
        }
    }

    /// Inserts or replaces a vector.
    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Structural(format!(
                "vector has dimension {}, expected {}",
                vector.len(),
                self.dim
            )));
        }
        let word = word.into();
        if self.vectors.insert(word.clone(), vector).is_none() {
            self.words.push(word);
        }
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Text serialization with six significant digits per value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for w in &self.words {
            out.push_str(w);
            for v in &self.vectors[w] {
                out.push_str(&format!(" {v:.5e}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<PretrainedEmbeddings> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, expected_dim, &path.display().to_string())
}

/// Parses whitespace-separated `word v1 ... vd` lines. The dimension comes
/// from `expected_dim` or the first line; later duplicates replace earlier ones.
pub fn parse_embeddings(text: &str, expected_dim: Option<usize>, source: &str) -> Result<PretrainedEmbeddings> {
    let mut table: Option<PretrainedEmbeddings> = expected_dim.map(PretrainedEmbeddings::new);
    for (lineno, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(source, lineno + 1, format!("non-numeric field {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let t = table.get_or_insert_with(|| PretrainedEmbeddings::new(values.len()));
        if values.len() != t.dim || values.is_empty() {
            return Err(Error::parse(
                source,
                lineno + 1,
                format!("expected {} values, found {}", t.dim, values.len()),
            ));
        }
        t.insert(word, values)?;
    }
    table.ok_or_else(|| Error::Empty(format!("{source}: no embeddings")))
}

/// Where an embedding row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingSource {
    Pretrained,
    Learned,
    Random,
    /// The shared `<unk>` vector, either the unknown row itself or a word
    /// that was mapped onto it.
    UnkShared,
}

impl fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pretrained => "pretrained",
            Self::Learned => "learned",
            Self::Random => "random",
            Self::UnkShared => "unk-shared",
        })
    }
}

/// Embedding matrix aligned with a vocabulary, with a source tag per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub matrix: Array2<f64>,
    pub sources: Vec<EmbeddingSource>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }
}

fn random_row(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let dist = Uniform::new_inclusive(-RANDOM_INIT_RANGE, RANDOM_INIT_RANGE).expect("finite range");
    (0..dim).map(|_| dist.sample(rng)).collect()
}

/// Training-time word table: pre-trained rows where available, seeded
/// uniform rows otherwise. The `<unk>` row uses the pre-trained `<unk>`
/// vector when the file provides one.
pub fn initial_word_table(
    vocab: &Vocabulary,
    pretrained: Option<&PretrainedEmbeddings>,
    dim: usize,
    rng_seed: u64,
) -> Result<EmbeddingTable> {
    if let Some(p) = pretrained {
        if p.dim != dim {
            return Err(Error::Config(format!(
                "pre-trained embeddings have dimension {}, model expects {dim}",
                p.dim
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut matrix = Array2::zeros((vocab.len(), dim));
    let mut sources = Vec::with_capacity(vocab.len());
    for (i, w) in vocab.words().iter().enumerate() {
        let (row, src) = match pretrained.and_then(|p| p.get(w)) {
            Some(v) if w == UNK => (v.to_vec(), EmbeddingSource::UnkShared),
            Some(v) => (v.to_vec(), EmbeddingSource::Pretrained),
            None => (random_row(&mut rng, dim), EmbeddingSource::Random),
        };
        matrix.row_mut(i).assign(&ndarray::Array1::from(row));
        sources.push(src);
    }
    Ok(EmbeddingTable { matrix, sources })
}

/// Test-time embedding selection strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionStrategy {
    /// Training vocabulary and trained rows; everything else is `<unk>`.
    Direct,
    /// Target vocabulary; pre-trained rows, else random rows.
    Random,
    /// Target vocabulary; pre-trained rows, else `<unk>`.
    Unknown,
    /// Target vocabulary; pre-trained rows, else learned rows, else random rows.
    Standard,
}

impl SelectionStrategy {
    pub const ALL: [SelectionStrategy; 4] = [Self::Direct, Self::Random, Self::Unknown, Self::Standard];
}

impl FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(Self::Direct),
            "random" => Ok(Self::Random),
            "unknown" => Ok(Self::Unknown),
            "standard" => Ok(Self::Standard),
            _ => Err(Error::Config(format!("unknown embedding-selection strategy {s:?}"))),
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Direct => "direct",
            Self::Random => "random",
            Self::Unknown => "unknown",
            Self::Standard => "standard",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub strategy: SelectionStrategy,
    /// One entry per row of the returned vocabulary, in index order.
    pub assignments: Vec<(String, EmbeddingSource)>,
    pub counts: BTreeMap<EmbeddingSource, usize>,
    pub type_unknown_rate: f64,
    pub token_unknown_rate: f64,
}

/// Applies a selection strategy. `learned` must be indexed by `train_vocab`.
/// Unknown proportions are measured on `test_corpus`: a test token counts as
/// unknown if it is outside the active vocabulary or its row is the shared
/// `<unk>` vector.
pub fn select_embeddings<S: AsRef<str>>(
    strategy: SelectionStrategy,
    train_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
    pretrained: &PretrainedEmbeddings,
    learned: Option<&EmbeddingTable>,
    rng_seed: u64,
    test_corpus: &[Vec<S>],
) -> Result<(Vocabulary, EmbeddingTable, SelectionReport)> {
    let needs_learned = matches!(strategy, SelectionStrategy::Direct | SelectionStrategy::Standard);
    if needs_learned && learned.is_none() {
        return Err(Error::Config(format!("strategy {strategy} needs the learned embedding table")));
    }
    if let Some(l) = learned {
        if l.len() != train_vocab.len() {
            return Err(Error::Structural(format!(
                "learned table has {} rows, training vocabulary has {}",
                l.len(),
                train_vocab.len()
            )));
        }
    }
    let dim = learned.map_or(pretrained.dim, EmbeddingTable::dim);
    if pretrained.dim != dim && strategy != SelectionStrategy::Direct {
        return Err(Error::Config(format!(
            "pre-trained dimension {} differs from learned dimension {dim}",
            pretrained.dim
        )));
    }
    let learned_row = |w: &str| -> Option<Vec<f64>> {
        let l = learned?;
        let i = if w == UNK { Some(train_vocab.unk_index()) } else { train_vocab.get(w) }?;
        Some(l.matrix.row(i).to_vec())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let vocab = match strategy {
        SelectionStrategy::Direct => train_vocab.clone(),
        _ => target_vocab.clone(),
    };
    let unk_row: (Vec<f64>, EmbeddingSource) = match (strategy, pretrained.get(UNK)) {
        (SelectionStrategy::Direct, Some(_)) => (learned_row(UNK).expect("checked"), EmbeddingSource::UnkShared),
        (SelectionStrategy::Direct, None) => (learned_row(UNK).expect("checked"), EmbeddingSource::Learned),
        (_, Some(v)) => (v.to_vec(), EmbeddingSource::UnkShared),
        (_, None) => match learned_row(UNK) {
            Some(v) => (v, EmbeddingSource::Learned),
            None => (random_row(&mut rng, dim), EmbeddingSource::Random),
        },
    };

    let mut matrix = Array2::zeros((vocab.len(), dim));
    let mut sources = Vec::with_capacity(vocab.len());
    for (i, w) in vocab.words().iter().enumerate() {
        let (row, src) = if i == vocab.unk_index() {
            unk_row.clone()
        } else {
            match strategy {
                SelectionStrategy::Direct => (learned_row(w).expect("word from training vocabulary"), EmbeddingSource::Learned),
                _ => match pretrained.get(w) {
                    Some(v) => (v.to_vec(), EmbeddingSource::Pretrained),
                    None => match strategy {
                        SelectionStrategy::Unknown => (unk_row.0.clone(), EmbeddingSource::UnkShared),
                        SelectionStrategy::Standard => match learned_row(w) {
                            Some(v) => (v, EmbeddingSource::Learned),
                            None => (random_row(&mut rng, dim), EmbeddingSource::Random),
                        },
                        _ => (random_row(&mut rng, dim), EmbeddingSource::Random),
                    },
                },
            }
        };
        matrix.row_mut(i).assign(&ndarray::Array1::from(row));
        sources.push(src);
    }

    let mut counts = BTreeMap::new();
    for s in &sources {
        *counts.entry(*s).or_insert(0) += 1;
    }
    let mapped: HashSet<&str> = vocab
        .words()
        .iter()
        .zip(&sources)
        .filter(|(w, s)| w.as_str() != UNK && **s == EmbeddingSource::UnkShared)
        .map(|(w, _)| w.as_str())
        .collect();
    let (type_unknown_rate, token_unknown_rate) =
        unknown_rates(test_corpus, |w| vocab.contains(w) && !mapped.contains(w))?;
    let report = SelectionReport {
        strategy,
        assignments: vocab.words().iter().cloned().zip(sources.iter().copied()).collect(),
        counts,
        type_unknown_rate,
        token_unknown_rate,
    };
    Ok((vocab, EmbeddingTable { matrix, sources }, report))
}

fn unknown_rates<S: AsRef<str>>(corpus: &[Vec<S>], known: impl Fn(&str) -> bool) -> Result<(f64, f64)> {
    let mut types: HashSet<&str> = HashSet::new();
    let mut unknown_types: HashSet<&str> = HashSet::new();
    let (mut tokens, mut unknown_tokens) = (0usize, 0usize);
    for sent in corpus {
        for tok in sent {
            let t = tok.as_ref();
            tokens += 1;
            types.insert(t);
            if !known(t) {
                unknown_tokens += 1;
                unknown_types.insert(t);
            }
        }
    }
    if tokens == 0 {
        return Err(Error::Empty("unknown-word statistics need a non-empty corpus".into()));
    }
    Ok((
        unknown_types.len() as f64 / types.len() as f64,
        unknown_tokens as f64 / tokens as f64,
    ))
}

/// Proportions of out-of-vocabulary word types and tokens in `corpus`.
pub fn unknown_stats<S: AsRef<str>>(corpus: &[Vec<S>], vocab: &Vocabulary) -> Result<(f64, f64)> {
    unknown_rates(corpus, |w| vocab.contains(w))
}
