//! Decoding corpora with a trained model and scoring against gold trees.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Decoder;
use super::corpus::{Corpus, Treebank};
use super::train::{derive_seed, Checkpoint};
use crate::chart::{inside, mbr_decode, outside, span_posteriors, viterbi_decode};
use crate::error::{Error, Result};
use crate::evaluation::{corpus_f1, EvalRecord, MetricsReport, Prediction};
use crate::grammar::{tree_to_spans, ParseTree, RuleTable, Sentence, SpanSet, TrivialSpanPolicy};
use crate::lexicon::{build_vocabulary, select_embeddings, EmbeddingTable, PretrainedEmbeddings, SelectionReport, SelectionStrategy, Vocabulary};
use crate::parameterization::{compute_rule_table, encode_latent, ParameterSet};

/// Rule table used at test time: the latent is fixed to its posterior mean.
fn table_for(params: &ParameterSet, sentence: &Sentence) -> Result<RuleTable> {
    if params.dims.d_z == 0 {
        params.rule_table()
    } else {
        let (mu, _) = encode_latent(params, sentence)?;
        compute_rule_table(params, Some(&mu))
    }
}

fn decode_one(table: &RuleTable, sentence: &Sentence, decoder: Decoder) -> Result<(ParseTree, f64)> {
    let ins = inside(table, sentence)?;
    let logp = ins.log_marginal;
    let tree = match decoder {
        Decoder::Mbr => {
            let outs = outside(table, sentence, &ins)?;
            mbr_decode(&span_posteriors(&ins, &outs)?)?
        }
        Decoder::Viterbi => viterbi_decode(table, sentence)?.0,
    };
    Ok((tree, logp))
}

/// Best tree and log-marginal per sentence, in input order. Sentences
/// shorter than two tokens get `None`.
pub fn decode_sentences(
    params: &ParameterSet,
    sentences: &[Sentence],
    decoder: Decoder,
) -> Result<Vec<Option<(ParseTree, f64)>>> {
    let shared = if params.dims.d_z == 0 { Some(params.rule_table()?) } else { None };
    sentences
        .par_iter()
        .map(|s| {
            if s.len() < 2 {
                return Ok(None);
            }
            let owned;
            let table = match &shared {
                Some(t) => t,
                None => {
                    owned = table_for(params, s)?;
                    &owned
                }
            };
            decode_one(table, s, decoder).map(Some)
        })
        .collect()
}

/// Decodes raw token lists with the given vocabulary.
pub fn predict(
    params: &ParameterSet,
    vocab: &Vocabulary,
    ids: &[String],
    tokens: &[Vec<String>],
    decoder: Decoder,
) -> Result<Vec<Prediction>> {
    let sentences = tokens.iter().map(|t| vocab.encode(t)).collect::<Result<Vec<_>>>()?;
    let decoded = decode_sentences(params, &sentences, decoder)?;
    Ok(ids
        .iter()
        .zip(tokens)
        .zip(decoded)
        .map(|((id, toks), d)| {
            let (spans, logp) = match d {
                Some((tree, lp)) => (tree_to_spans(&tree, TrivialSpanPolicy::KeepRoot).iter().collect(), Some(lp)),
                None => (Vec::new(), None),
            };
            Prediction {
                id: id.clone(),
                tokens: toks.clone(),
                spans,
                logp,
            }
        })
        .collect())
}

/// Pairs predictions with gold entries by id. Any id present on one side
/// only, or a token-count disagreement, is an alignment error.
pub fn align<'a>(
    predictions: &'a [Prediction],
    gold: &'a Treebank,
) -> Result<Vec<(&'a Prediction, &'a super::corpus::TreebankEntry)>> {
    let by_id: HashMap<&str, &Prediction> = predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let gold_ids: HashMap<&str, ()> = gold.entries.iter().map(|e| (e.id.as_str(), ())).collect();
    let mut offending: Vec<String> = Vec::new();
    for e in &gold.entries {
        if !by_id.contains_key(e.id.as_str()) {
            offending.push(format!("{} (no prediction)", e.id));
        }
    }
    for p in predictions {
        if !gold_ids.contains_key(p.id.as_str()) {
            offending.push(format!("{} (no gold tree)", p.id));
        }
    }
    if predictions.len() != gold.len() || !offending.is_empty() {
        return Err(Error::Alignment(format!(
            "{} predictions vs {} gold sentences; offending ids: {}",
            predictions.len(),
            gold.len(),
            if offending.is_empty() { "duplicates".to_string() } else { offending.join(", ") }
        )));
    }
    let mut pairs = Vec::with_capacity(gold.len());
    for e in &gold.entries {
        let p = by_id[e.id.as_str()];
        if p.tokens.len() != e.tokens.len() {
            return Err(Error::Alignment(format!(
                "sentence {} has {} predicted tokens and {} gold tokens",
                e.id,
                p.tokens.len(),
                e.tokens.len()
            )));
        }
        pairs.push((p, e));
    }
    Ok(pairs)
}

/// Evaluation records in gold order. `vocab`, when given, is used to count
/// unknown tokens per sentence.
pub fn evaluate_predictions(
    predictions: &[Prediction],
    gold: &Treebank,
    vocab: Option<&Vocabulary>,
) -> Result<(MetricsReport, Vec<EvalRecord>)> {
    let records = align(predictions, gold)?
        .into_par_iter()
        .map(|(p, e)| {
            let unk = vocab.map_or(0, |v| e.tokens.iter().filter(|t| !v.contains(t)).count());
            let pred: SpanSet = p.spans.iter().copied().collect();
            EvalRecord::new(&e.id, e.tokens.len(), unk, &pred, &e.gold)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((corpus_f1(&records)?, records))
}

/// Decodes a gold corpus with the training vocabulary and scores it.
pub fn evaluate_corpus(
    params: &ParameterSet,
    vocab: &Vocabulary,
    corpus: &Corpus,
    decoder: Decoder,
) -> Result<(MetricsReport, Vec<EvalRecord>)> {
    let gold = corpus
        .treebank
        .as_ref()
        .ok_or_else(|| Error::Config("evaluation needs a corpus with gold trees".into()))?;
    let preds = predict(params, vocab, &corpus.ids, &corpus.tokens, decoder)?;
    evaluate_predictions(&preds, gold, Some(vocab))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseOutput {
    pub predictions: Vec<Prediction>,
    pub selection: SelectionReport,
}

/// Zero-shot parsing of a target corpus: embeddings are chosen by
/// `strategy`, then every sentence is decoded. Images are never consulted.
pub fn parse_corpus(
    checkpoint: &Checkpoint,
    corpus: &Corpus,
    strategy: SelectionStrategy,
    pretrained: Option<&PretrainedEmbeddings>,
    decoder: Decoder,
) -> Result<ParseOutput> {
    let params = &checkpoint.params;
    let train_vocab = &checkpoint.vocab;
    let cfg = &checkpoint.config.vocab;
    let target_vocab = build_vocabulary(&corpus.tokens, cfg.size_cap, cfg.lowercase)?;
    let empty = PretrainedEmbeddings::new(params.dims.d_word);
    let learned = EmbeddingTable {
        matrix: params.word_embeddings.clone(),
        sources: checkpoint.embedding_sources.clone(),
    };
    let (vocab, table, selection) = select_embeddings(
        strategy,
        train_vocab,
        &target_vocab,
        pretrained.unwrap_or(&empty),
        Some(&learned),
        derive_seed(&[checkpoint.config.training.rng_seed, 2]),
        &corpus.tokens,
    )?;
    let mut dims = params.dims;
    dims.vocab_size = vocab.len();
    let mut swapped = params.clone();
    swapped.dims = dims;
    swapped.word_embeddings = ndarray::Array2::zeros((vocab.len(), dims.d_word));
    let swapped = swapped.with_word_embeddings(table.matrix, params.word_embeddings_frozen)?;
    let predictions = predict(&swapped, &vocab, &corpus.ids, &corpus.tokens, decoder)?;
    Ok(ParseOutput { predictions, selection })
}
