//! Evaluation, analysis and significance drivers, and the multi-seed protocol.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::corpus::Treebank;
use super::parse::evaluate_predictions;
use super::train::{derive_seed, train_with, BatchRecord, Checkpoint, TrainingInputs};
use crate::analysis::{error_buckets, extract_factors, overlap_rates, paired_t_test, ErrorBucketTable, OverlapReport, PairedTest};
use crate::error::{Error, Result};
use crate::evaluation::{branching_baseline, perm_baseline, Direction, EvalRecord, MetricsReport, Prediction};
use crate::grammar::{tree_to_spans, TrivialSpanPolicy};
use crate::lexicon::{build_vocabulary, Vocabulary};

/// Model metrics next to the structural and PERM baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub model: MetricsReport,
    pub left_branching: MetricsReport,
    pub right_branching: MetricsReport,
    pub perm: MetricsReport,
}

/// Branching-baseline predictions for every gold sentence.
pub fn baseline_predictions(gold: &Treebank, direction: Direction) -> Result<Vec<Prediction>> {
    gold.entries
        .iter()
        .map(|e| {
            let n = e.tokens.len();
            let spans = if n < 2 {
                Vec::new()
            } else {
                tree_to_spans(&branching_baseline(n, direction)?, TrivialSpanPolicy::KeepRoot).iter().collect()
            };
            Ok(Prediction {
                id: e.id.clone(),
                tokens: e.tokens.clone(),
                spans,
                logp: None,
            })
        })
        .collect()
}

pub fn run_evaluate(
    predictions: &[Prediction],
    gold: &Treebank,
    vocab: Option<&Vocabulary>,
    perm_seed: u64,
) -> Result<(EvaluationSummary, Vec<EvalRecord>)> {
    let (model, records) = evaluate_predictions(predictions, gold, vocab)?;
    let left = evaluate_predictions(&baseline_predictions(gold, Direction::Left)?, gold, None)?.0;
    let right = evaluate_predictions(&baseline_predictions(gold, Direction::Right)?, gold, None)?.0;
    let perm = evaluate_predictions(&perm_baseline(predictions, perm_seed), gold, None)?.0;
    Ok((
        EvaluationSummary {
            model,
            left_branching: left,
            right_branching: right,
            perm,
        },
        records,
    ))
}

/// Overlap between two treebanks. With `unk_vocab`, lexical rules are
/// compared after mapping words outside it to `<unk>`.
pub fn run_analyze_overlap(train: &Treebank, test: &Treebank, unk_vocab: Option<&Vocabulary>) -> Result<OverlapReport> {
    let a = extract_factors(&train.trees(), unk_vocab)?;
    let b = extract_factors(&test.trees(), unk_vocab)?;
    overlap_rates(&a, &b)
}

pub fn run_analyze_errors(
    predictions: &[Prediction],
    gold: &Treebank,
    vocab: Option<&Vocabulary>,
    bucket_width: usize,
) -> Result<ErrorBucketTable> {
    let (_, records) = evaluate_predictions(predictions, gold, vocab)?;
    error_buckets(&records, bucket_width)
}

/// One S-F1 result of the seed protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub condition: String,
    pub seed: u64,
    pub sentence_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition,seed,sentence_f1\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.condition, r.seed, r.sentence_f1));
        }
        out
    }

    pub fn from_csv(text: &str, source: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (k == 0 && line.starts_with("condition")) {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |m: &str| Error::parse(source, k + 1, m.to_string());
            if f.len() != 3 {
                return Err(bad("expected condition,seed,sentence_f1"));
            }
            rows.push(ScoreRow {
                condition: f[0].to_string(),
                seed: f[1].parse().map_err(|_| bad("bad seed"))?,
                sentence_f1: f[2].parse().map_err(|_| bad("bad score"))?,
            });
        }
        Ok(Self { rows })
    }

    pub fn column(&self, condition: &str) -> BTreeMap<u64, f64> {
        self.rows
            .iter()
            .filter(|r| r.condition == condition)
            .map(|r| (r.seed, r.sentence_f1))
            .collect()
    }
}

/// Paired t-test of condition `a` against `b`, paired by seed.
pub fn run_significance(table: &ScoreTable, a: &str, b: &str) -> Result<PairedTest> {
    let (ca, cb) = (table.column(a), table.column(b));
    if ca.is_empty() || cb.is_empty() {
        return Err(Error::Config(format!("score table lacks condition {}", if ca.is_empty() { a } else { b })));
    }
    let unpaired: Vec<String> = ca
        .keys()
        .filter(|s| !cb.contains_key(s))
        .chain(cb.keys().filter(|s| !ca.contains_key(s)))
        .map(|s| s.to_string())
        .collect();
    if !unpaired.is_empty() {
        return Err(Error::Alignment(format!("seeds without a partner: {}", unpaired.join(", "))));
    }
    let xs: Vec<f64> = ca.values().copied().collect();
    let ys: Vec<f64> = cb.values().copied().collect();
    paired_t_test(&xs, &ys)
}

/// Seed-control conditions for variance studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// Text-only; model seed varies, data order fixed.
    #[serde(rename = "RM")]
    Rm,
    /// Text-only; model seed and data order both vary.
    #[serde(rename = "RM+RD")]
    RmRd,
    /// Grounded; model seed varies, data order fixed.
    #[serde(rename = "V-RM")]
    VRm,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Rm => "RM",
            Condition::RmRd => "RM+RD",
            Condition::VRm => "V-RM",
        })
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RM" => Ok(Condition::Rm),
            "RM+RD" => Ok(Condition::RmRd),
            "V-RM" => Ok(Condition::VRm),
            _ => Err(Error::Config(format!("unknown condition {s:?}; expected RM, RM+RD or V-RM"))),
        }
    }
}

/// Model and data-order seeds of run `k` under a condition.
pub fn condition_seeds(condition: Condition, config: &ExperimentConfig, k: usize) -> (u64, u64) {
    let model = config.training.rng_seed.wrapping_add(k as u64);
    let data = match condition {
        Condition::RmRd => derive_seed(&[config.data_seed, k as u64, 0x5244]),
        _ => config.data_seed,
    };
    (model, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRun {
    pub condition: Condition,
    pub seed: u64,
    pub model_seed: u64,
    pub data_seed: u64,
    /// Checksum of the parameters before the first update.
    pub init_checksum: u64,
    pub batch_log: Vec<BatchRecord>,
    pub sentence_f1: f64,
}

/// Trains one model per (condition, seed) and scores each on the dev corpus.
/// Text-only conditions force `alpha = 0`; V-RM uses the configured alpha,
/// or 1 when it is 0.
pub fn seed_experiment_protocol(
    config: &ExperimentConfig,
    inputs: &TrainingInputs,
    conditions: &[Condition],
    num_seeds: usize,
) -> Result<(ScoreTable, Vec<ProtocolRun>)> {
    let dev = inputs
        .dev
        .as_ref()
        .filter(|d| d.treebank.is_some())
        .ok_or_else(|| Error::Config("the protocol needs a dev treebank".into()))?;
    if conditions.contains(&Condition::VRm) && inputs.images.is_none() {
        return Err(Error::Config("V-RM needs image vectors; the corpus is text-only".into()));
    }
    if num_seeds == 0 {
        return Err(Error::Config("num_seeds must be positive".into()));
    }
    let vocab = build_vocabulary(&inputs.train.tokens, config.vocab.size_cap, config.vocab.lowercase)?;
    let d_img = inputs.images.as_ref().and_then(|v| v.first()).map_or(0, |x| x.values.len());
    let jobs: Vec<(Condition, usize)> = conditions
        .iter()
        .flat_map(|&c| (0..num_seeds).map(move |k| (c, k)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(condition, k)| {
            let (model_seed, data_seed) = condition_seeds(condition, config, k);
            let mut cfg = config.clone();
            cfg.training.rng_seed = model_seed;
            cfg.data_seed = data_seed;
            cfg.training.alpha = match condition {
                Condition::VRm if config.training.alpha > 0.0 => config.training.alpha,
                Condition::VRm => 1.0,
                _ => 0.0,
            };
            let fresh = Checkpoint::new(&cfg, vocab.clone(), inputs.pretrained.as_ref(), d_img)?;
            let init_checksum = fresh.params.checksum();
            let ck = train_with(&cfg, inputs, Some(fresh), |_| Ok(()))?;
            let (report, _) = super::parse::evaluate_corpus(&ck.params, &ck.vocab, dev, cfg.decoder)?;
            Ok(ProtocolRun {
                condition,
                seed: k as u64,
                model_seed,
                data_seed,
                init_checksum,
                batch_log: ck.batch_log,
                sentence_f1: report.sentence_f1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let table = ScoreTable {
        rows: runs
            .iter()
            .map(|r| ScoreRow {
                condition: r.condition.to_string(),
                seed: r.seed,
                sentence_f1: r.sentence_f1,
            })
            .collect(),
    };
    Ok((table, runs))
}
