//! Unlabeled bracketing F1, structural baselines and the PERM baseline.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{ParseTree, Span, SpanSet, TrivialSpanPolicy};

/// One line of a predictions file. `spans` lists every constituent of
/// width >= 2, the whole-sentence span included. `logp` is `null` when the
/// sentence has no parse under the grammar (e.g. a single token).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub tokens: Vec<String>,
    pub spans: Vec<Span>,
    pub logp: Option<f64>,
}

impl Prediction {
    pub fn span_set(&self) -> SpanSet {
        self.spans.iter().copied().collect()
    }
}

/// Precision, recall and F1 after dropping trivial spans from both sides.
/// Two empty sets score (1, 1, 1).
pub fn sentence_f1(pred: &SpanSet, gold: &SpanSet, length: usize) -> Result<(f64, f64, f64)> {
    pred.check_bounds(length)?;
    gold.check_bounds(length)?;
    let p = pred.filtered(TrivialSpanPolicy::Default, length);
    let g = gold.filtered(TrivialSpanPolicy::Default, length);
    Ok(prf(p.intersection_count(&g), p.len(), g.len()))
}

fn prf(tp: usize, n_pred: usize, n_gold: usize) -> (f64, f64, f64) {
    if n_pred == 0 && n_gold == 0 {
        return (1.0, 1.0, 1.0);
    }
    let p = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
    let r = if n_gold == 0 { 0.0 } else { tp as f64 / n_gold as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Per-sentence comparison. Span sets are stored after trivial-span removal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub length: usize,
    pub unk_count: usize,
    pub predicted: SpanSet,
    pub gold: SpanSet,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalRecord {
    pub fn new(id: impl Into<String>, length: usize, unk_count: usize, predicted: &SpanSet, gold: &SpanSet) -> Result<Self> {
        let (precision, recall, f1) = sentence_f1(predicted, gold, length)?;
        Ok(Self {
            id: id.into(),
            length,
            unk_count,
            predicted: predicted.filtered(TrivialSpanPolicy::Default, length),
            gold: gold.filtered(TrivialSpanPolicy::Default, length),
            precision,
            recall,
            f1,
        })
    }

    pub fn true_positives(&self) -> usize {
        self.predicted.intersection_count(&self.gold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub length: usize,
    pub sentences: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub corpus_f1: f64,
    pub sentence_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sentences: usize,
    pub corpus_precision: f64,
    pub corpus_recall: f64,
    pub corpus_f1: f64,
    pub sentence_f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub per_length: Vec<LengthRow>,
}

struct Tally {
    n: usize,
    tp: usize,
    fp: usize,
    fneg: usize,
    f1_sum: f64,
}

impl Tally {
    fn new() -> Self {
        Self {
            n: 0,
            tp: 0,
            fp: 0,
            fneg: 0,
            f1_sum: 0.0,
        }
    }

    fn add(&mut self, r: &EvalRecord) {
        let tp = r.true_positives();
        self.n += 1;
        self.tp += tp;
        self.fp += r.predicted.len() - tp;
        self.fneg += r.gold.len() - tp;
        self.f1_sum += r.f1;
    }

    fn prf(&self) -> (f64, f64, f64) {
        prf(self.tp, self.tp + self.fp, self.tp + self.fneg)
    }
}

/// Pools span counts over all records (C-F1) and averages per-sentence F1 (S-F1).
pub fn corpus_f1(records: &[EvalRecord]) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::Empty("no records to evaluate".into()));
    }
    let mut all = Tally::new();
    let mut by_len: BTreeMap<usize, Tally> = BTreeMap::new();
    for r in records {
        all.add(r);
        by_len.entry(r.length).or_insert_with(Tally::new).add(r);
    }
    let (p, rc, f) = all.prf();
    let per_length = by_len
        .into_iter()
        .map(|(length, t)| LengthRow {
            length,
            sentences: t.n,
            true_positives: t.tp,
            false_positives: t.fp,
            false_negatives: t.fneg,
            corpus_f1: t.prf().2,
            sentence_f1: t.f1_sum / t.n as f64,
        })
        .collect();
    Ok(MetricsReport {
        sentences: all.n,
        corpus_precision: p,
        corpus_recall: rc,
        corpus_f1: f,
        sentence_f1: all.f1_sum / all.n as f64,
        true_positives: all.tp,
        false_positives: all.fp,
        false_negatives: all.fneg,
        per_length,
    })
}

impl MetricsReport {
    pub fn per_length_csv(&self) -> String {
        let mut out = String::from("length,sentences,tp,fp,fn,corpus_f1,sentence_f1\n");
        for r in &self.per_length {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.length, r.sentences, r.true_positives, r.false_positives, r.false_negatives, r.corpus_f1, r.sentence_f1
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

pub fn branching_baseline(n: usize, direction: Direction) -> Result<ParseTree> {
    if n < 2 {
        return Err(Error::Degenerate(format!("branching baseline needs n >= 2, got {n}")));
    }
    match direction {
        Direction::Left => ParseTree::left_branching(n),
        Direction::Right => ParseTree::right_branching(n),
    }
}

/// Shuffles the predicted trees among sentences of equal length. Each length
/// group draws from its own seeded stream, so groups do not affect one another.
pub fn perm_baseline(predictions: &[Prediction], rng_seed: u64) -> Vec<Prediction> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, p) in predictions.iter().enumerate() {
        groups.entry(p.tokens.len()).or_default().push(k);
    }
    let mut out = predictions.to_vec();
    for (length, members) in groups {
        if members.len() < 2 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(length as u64);
        let mut order = members.clone();
        order.shuffle(&mut rng);
        for (&dst, &src) in members.iter().zip(&order) {
            out[dst].spans = predictions[src].spans.clone();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::tree_to_spans;
    use proptest::prelude::*;

    fn spans(v: &[Span]) -> SpanSet {
        v.iter().copied().collect()
    }

    #[test]
    fn sentence_f1_fixtures() {
        let g = spans(&[(0, 2), (2, 4)]);
        assert_eq!(sentence_f1(&g, &g, 4).unwrap(), (1.0, 1.0, 1.0));
        assert_eq!(sentence_f1(&spans(&[(1, 3)]), &g, 4).unwrap(), (0.0, 0.0, 0.0));
        let (p, r, f) = sentence_f1(&spans(&[(0, 2), (2, 5), (0, 5)]), &spans(&[(0, 2), (3, 5)]), 5).unwrap();
        assert_eq!((p, r, f), (0.5, 0.5, 0.5));
        assert_eq!(sentence_f1(&spans(&[(0, 2)]), &g, 4).unwrap().1, 0.5);
        assert_eq!(sentence_f1(&SpanSet::new(), &SpanSet::new(), 2).unwrap(), (1.0, 1.0, 1.0));
        assert!(matches!(sentence_f1(&spans(&[(0, 7)]), &g, 4), Err(Error::Structural(_))));
    }

    fn record(id: &str, n: usize, pred: &[Span], gold: &[Span]) -> EvalRecord {
        EvalRecord::new(id, n, 0, &spans(pred), &spans(gold)).unwrap()
    }

    #[test]
    fn corpus_f1_fixtures() {
        let a = record("a", 5, &[(0, 2), (0, 3), (3, 5)], &[(0, 2), (0, 3), (3, 5)]);
        let single = corpus_f1(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.corpus_f1, a.f1);
        assert_eq!(single.sentence_f1, a.f1);

        let b = record("b", 5, &[(1, 3), (1, 4), (3, 5)], &[(0, 2), (0, 3), (2, 4)]);
        let both = corpus_f1(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(b.f1, 0.0);
        assert_eq!(both.sentence_f1, 0.5);
        // pooled: tp 3+0, pred 3+3, gold 3+3
        assert!((both.corpus_f1 - 0.5).abs() < 1e-15);
        assert_eq!((both.true_positives, both.false_positives, both.false_negatives), (3, 3, 3));

        let doubled = corpus_f1(&[a.clone(), b.clone(), a, b]).unwrap();
        assert_eq!(doubled.corpus_f1, both.corpus_f1);
        assert_eq!(doubled.sentence_f1, both.sentence_f1);
        assert!(matches!(corpus_f1(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn per_length_breakdown_and_csv() {
        let r = corpus_f1(&[
            record("a", 4, &[(0, 2)], &[(0, 2)]),
            record("b", 3, &[(0, 2)], &[(1, 3)]),
        ])
        .unwrap();
        assert_eq!(r.per_length.len(), 2);
        assert_eq!(r.per_length[0].length, 3);
        assert_eq!(r.per_length[0].sentence_f1, 0.0);
        let csv = r.per_length_csv();
        assert!(csv.starts_with("length,sentences,tp,fp,fn,corpus_f1,sentence_f1\n3,1,0,1,1,0,0\n"));
    }

    #[test]
    fn branching_baselines() {
        let right = branching_baseline(4, Direction::Right).unwrap();
        assert_eq!(tree_to_spans(&right, TrivialSpanPolicy::Default), spans(&[(1, 4), (2, 4)]));
        let left = branching_baseline(4, Direction::Left).unwrap();
        assert_eq!(tree_to_spans(&left, TrivialSpanPolicy::Default), spans(&[(0, 2), (0, 3)]));
        for d in [Direction::Left, Direction::Right] {
            assert!(tree_to_spans(&branching_baseline(2, d).unwrap(), TrivialSpanPolicy::Default).is_empty());
            assert!(matches!(branching_baseline(1, d), Err(Error::Degenerate(_))));
        }
    }

    fn pred(id: &str, n: usize, s: &[Span]) -> Prediction {
        Prediction {
            id: id.into(),
            tokens: (0..n).map(|i| format!("t{i}")).collect(),
            spans: s.to_vec(),
            logp: Some(-1.0),
        }
    }

    #[test]
    fn perm_fixtures() {
        let singles = vec![pred("a", 3, &[(0, 2), (0, 3)]), pred("b", 4, &[(1, 4), (0, 4)])];
        assert_eq!(perm_baseline(&singles, 9), singles);

        let same = vec![pred("a", 3, &[(0, 2), (0, 3)]), pred("b", 3, &[(0, 2), (0, 3)])];
        assert_eq!(perm_baseline(&same, 9), same);

        let group = vec![
            pred("a", 3, &[(0, 2), (0, 3)]),
            pred("b", 3, &[(1, 3), (0, 3)]),
            pred("c", 3, &[(0, 3), (0, 2)]),
        ];
        assert_eq!(perm_baseline(&group, 5), perm_baseline(&group, 5));
    }

    fn random_predictions() -> impl Strategy<Value = Vec<Prediction>> {
        proptest::collection::vec((2usize..6, 0usize..3), 1..20).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(k, (n, shape))| {
                    let tree = match shape {
                        0 => ParseTree::left_branching(n).unwrap(),
                        _ => ParseTree::right_branching(n).unwrap(),
                    };
                    pred(&format!("s{k}"), n, &tree_to_spans(&tree, TrivialSpanPolicy::KeepRoot).iter().collect::<Vec<_>>())
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn perm_preserves_group_multisets(preds in random_predictions(), seed in 0u64..100) {
            let permuted = perm_baseline(&preds, seed);
            let multiset = |ps: &[Prediction]| {
                let mut m: BTreeMap<usize, Vec<Vec<Span>>> = BTreeMap::new();
                for p in ps {
                    m.entry(p.tokens.len()).or_default().push(p.spans.clone());
                }
                for v in m.values_mut() {
                    v.sort();
                }
                m
            };
            prop_assert_eq!(multiset(&preds), multiset(&permuted));
            for (a, b) in preds.iter().zip(&permuted) {
                prop_assert_eq!(&a.id, &b.id);
            }
        }

        #[test]
        fn metrics_bounded_and_order_invariant(preds in random_predictions(), golds in random_predictions()) {
            let records: Vec<EvalRecord> = preds
                .iter()
                .zip(&golds)
                .filter(|(p, g)| p.tokens.len() == g.tokens.len())
                .map(|(p, g)| EvalRecord::new(&p.id, p.tokens.len(), 0, &p.span_set(), &g.span_set()).unwrap())
                .collect();
            prop_assume!(!records.is_empty());
            for r in &records {
                prop_assert!(r.f1 <= r.precision.max(r.recall) + 1e-15);
                // binary against binary: equal span counts
                prop_assert_eq!(r.precision, r.recall);
            }
            let a = corpus_f1(&records).unwrap();
            let mut rev = records.clone();
            rev.reverse();
            let b = corpus_f1(&rev).unwrap();
            prop_assert!((0.0..=1.0).contains(&a.corpus_f1) && (0.0..=1.0).contains(&a.sentence_f1));
            prop_assert_eq!(a.corpus_f1, b.corpus_f1);
            prop_assert!((a.sentence_f1 - b.sentence_f1).abs() < 1e-12);
        }
    }
}
