//! Python bindings for grammars, vocabularies, checkpoints, metrics and tests.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pcfg_transfer::analysis;
use pcfg_transfer::chart::{inside, mbr_decode, outside, span_posteriors, viterbi_decode};
use pcfg_transfer::evaluation;
use pcfg_transfer::grammar::{tree_to_spans, GrammarShape, RuleTable, Sentence, SpanSet, TrivialSpanPolicy};
use pcfg_transfer::lexicon::{self, SelectionStrategy};
use pcfg_transfer::pipeline::{self, Corpus, Decoder, ExperimentConfig};

type Span = (usize, usize);

fn err(e: pcfg_transfer::Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn decoder(name: &str) -> PyResult<Decoder> {
    match name {
        "mbr" => Ok(Decoder::Mbr),
        "viterbi" => Ok(Decoder::Viterbi),
        _ => Err(PyValueError::new_err(format!("unknown decoder {name:?}"))),
    }
}

fn span_set(spans: &[Span]) -> SpanSet {
    spans.iter().copied().collect()
}

/// Word-to-index mapping with `<unk>` as the last entry.
#[pyclass(module = "pcfg_transfer_py")]
#[derive(Clone)]
struct Vocabulary {
    inner: lexicon::Vocabulary,
}

#[pymethods]
impl Vocabulary {
    #[staticmethod]
    #[pyo3(signature = (corpus, size_cap = 10000, lowercase = false))]
    fn build(corpus: Vec<Vec<String>>, size_cap: usize, lowercase: bool) -> PyResult<Self> {
        let inner = lexicon::build_vocabulary(&corpus, size_cap, lowercase).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_dump(text: &str) -> PyResult<Self> {
        let inner = lexicon::Vocabulary::from_dump(text, "<python>").map_err(err)?;
        Ok(Self { inner })
    }

    fn to_dump(&self) -> String {
        self.inner.to_dump()
    }

    fn words(&self) -> Vec<String> {
        self.inner.words().to_vec()
    }

    fn index(&self, word: &str) -> usize {
        self.inner.index_or_unk(word)
    }

    fn encode(&self, tokens: Vec<String>) -> PyResult<Vec<usize>> {
        Ok(self.inner.encode(&tokens).map_err(err)?.tokens)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, word: &str) -> bool {
        self.inner.contains(word)
    }
}

/// A normalized PCFG rule table in log space.
#[pyclass(module = "pcfg_transfer_py")]
struct Grammar {
    table: RuleTable,
}

impl Grammar {
    fn sentence(&self, tokens: Vec<usize>) -> PyResult<Sentence> {
        Sentence::from_indices(tokens).map_err(err)
    }
}

#[pymethods]
impl Grammar {
    #[staticmethod]
    #[pyo3(signature = (num_nonterminals, num_preterminals, vocab_size, scale = 1.0, seed = 0))]
    fn random(num_nonterminals: usize, num_preterminals: usize, vocab_size: usize, scale: f64, seed: u64) -> PyResult<Self> {
        let shape = GrammarShape::new(num_nonterminals, num_preterminals, vocab_size).map_err(err)?;
        Ok(Self {
            table: RuleTable::random(shape, scale, seed),
        })
    }

    #[staticmethod]
    fn uniform(num_nonterminals: usize, num_preterminals: usize, vocab_size: usize) -> PyResult<Self> {
        let shape = GrammarShape::new(num_nonterminals, num_preterminals, vocab_size).map_err(err)?;
        Ok(Self {
            table: RuleTable::uniform(shape),
        })
    }

    /// `log p(w)` by the inside algorithm.
    fn log_marginal(&self, tokens: Vec<usize>) -> PyResult<f64> {
        let s = self.sentence(tokens)?;
        Ok(inside(&self.table, &s).map_err(err)?.log_marginal)
    }

    /// Posterior of every span of width >= 2, keyed by `(start, end)`.
    fn span_posteriors<'py>(&self, py: Python<'py>, tokens: Vec<usize>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.sentence(tokens)?;
        let ins = inside(&self.table, &s).map_err(err)?;
        let post = span_posteriors(&ins, &outside(&self.table, &s, &ins).map_err(err)?).map_err(err)?;
        let out = PyDict::new(py);
        for (span, p) in post.spans() {
            out.set_item(span, p)?;
        }
        Ok(out)
    }

    /// Best tree as spans (root included) and its log-probability.
    fn viterbi(&self, tokens: Vec<usize>) -> PyResult<(Vec<Span>, f64)> {
        let s = self.sentence(tokens)?;
        let (tree, logp) = viterbi_decode(&self.table, &s).map_err(err)?;
        Ok((tree_to_spans(&tree, TrivialSpanPolicy::KeepRoot).iter().collect(), logp))
    }

    /// Tree maximizing the expected number of correct spans.
    fn mbr(&self, tokens: Vec<usize>) -> PyResult<Vec<Span>> {
        let s = self.sentence(tokens)?;
        let ins = inside(&self.table, &s).map_err(err)?;
        let post = span_posteriors(&ins, &outside(&self.table, &s, &ins).map_err(err)?).map_err(err)?;
        let tree = mbr_decode(&post).map_err(err)?;
        Ok(tree_to_spans(&tree, TrivialSpanPolicy::KeepRoot).iter().collect())
    }
}

/// A trained model with its vocabulary and training logs.
#[pyclass(module = "pcfg_transfer_py")]
struct Checkpoint {
    inner: pipeline::Checkpoint,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: pipeline::Checkpoint::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn epochs_completed(&self) -> usize {
        self.inner.epochs_completed
    }

    #[getter]
    fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            inner: self.inner.vocab.clone(),
        }
    }

    /// Per-epoch losses as a CSV string.
    fn loss_log_csv(&self) -> String {
        pipeline::loss_log_csv(&self.inner.loss_log)
    }

    /// Parses token lists zero-shot; returns prediction JSON lines.
    #[pyo3(signature = (sentences, strategy = "standard", decoder_name = "mbr"))]
    fn parse(&self, sentences: Vec<Vec<String>>, strategy: &str, decoder_name: &str) -> PyResult<Vec<String>> {
        let strategy: SelectionStrategy = strategy.parse().map_err(err)?;
        let corpus = Corpus::from_tokens(sentences);
        let out = pipeline::parse_corpus(&self.inner, &corpus, strategy, None, decoder(decoder_name)?).map_err(err)?;
        out.predictions
            .iter()
            .map(|p| serde_json::to_string(p).map_err(|e| PyRuntimeError::new_err(e.to_string())))
            .collect()
    }
}

/// Trains from a JSON config plus `key=value` overrides and writes outputs
/// to the configured directory.
#[pyfunction]
#[pyo3(signature = (config_json = None, overrides = Vec::new()))]
fn train(py: Python<'_>, config_json: Option<String>, overrides: Vec<String>) -> PyResult<Checkpoint> {
    let mut cfg = ExperimentConfig::from_json_with_overrides(config_json.as_deref(), &overrides).map_err(err)?;
    cfg.apply_env();
    cfg.check_paths().map_err(err)?;
    let inner = py.allow_threads(|| pipeline::run_train(&cfg)).map_err(err)?;
    Ok(Checkpoint { inner })
}

/// Unlabeled precision, recall and F1 of one sentence, trivial spans removed.
#[pyfunction]
fn sentence_f1(predicted: Vec<Span>, gold: Vec<Span>, length: usize) -> PyResult<(f64, f64, f64)> {
    evaluation::sentence_f1(&span_set(&predicted), &span_set(&gold), length).map_err(err)
}

/// Corpus-level metrics for prediction JSON lines against a bracketed treebank.
#[pyfunction]
fn evaluate(predictions_jsonl: &str, gold_trees: &str) -> PyResult<String> {
    let preds = pipeline::parse_predictions(predictions_jsonl, "<python>").map_err(err)?;
    let gold = pipeline::parse_treebank(gold_trees, "<python>").map_err(err)?;
    let (summary, _) = pipeline::run_evaluate(&preds, &gold, None, 0).map_err(err)?;
    serde_json::to_string(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Paired t-test of `a` against `b`: `(t, p, mean_diff)`.
#[pyfunction]
fn paired_t_test(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let t = analysis::paired_t_test(&a, &b).map_err(err)?;
    Ok((t.t_stat, t.p_value, t.mean_diff))
}

/// Spearman rank correlation and its two-sided p-value.
#[pyfunction]
fn spearman(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<(f64, f64)> {
    analysis::spearman(&xs, &ys).map_err(err)
}

/// Samples a synthetic treebank from a seeded sparse grammar; returns bracketed text.
#[pyfunction]
#[pyo3(signature = (count, min_length = 2, max_length = 15, seed = 0, grammar_seed = 0))]
fn sample_corpus(count: usize, min_length: usize, max_length: usize, seed: u64, grammar_seed: u64) -> PyResult<String> {
    let grammar = pipeline::SyntheticGrammar {
        seed: grammar_seed,
        ..Default::default()
    };
    let (tb, _) = pipeline::sample_treebank(&grammar, count, min_length, max_length, seed).map_err(err)?;
    Ok(tb.to_text())
}

#[pymodule]
fn pcfg_transfer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Vocabulary>()?;
    m.add_class::<Grammar>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(sentence_f1, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(paired_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(sample_corpus, m)?)?;
    Ok(())
}
