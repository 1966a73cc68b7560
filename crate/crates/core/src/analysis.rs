//! Corpus overlap rates, success-to-failure error buckets and the rank and
//! paired statistics used to compare domains and training runs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::evaluation::EvalRecord;
use crate::grammar::LabeledTree;
use crate::lexicon::{Vocabulary, UNK};

/// Counted labels, rules and words of a treebank.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorInventory {
    pub labels: BTreeMap<String, usize>,
    /// `TAG -> word` rules.
    pub lexical_rules: BTreeMap<String, usize>,
    /// Every other rule, `PARENT -> CHILD ...`.
    pub nonlexical_rules: BTreeMap<String, usize>,
    pub words: BTreeMap<String, usize>,
}

impl FactorInventory {
    pub fn is_empty(&self) -> bool {
        self.words.is_empty() && self.labels.is_empty() && self.nonlexical_rules.is_empty()
    }

    /// Lexical and non-lexical rules together, keyed by tag and signature.
    pub fn rules(&self) -> BTreeMap<(bool, &str), usize> {
        let lex = self.lexical_rules.iter().map(|(k, &v)| ((true, k.as_str()), v));
        let non = self.nonlexical_rules.iter().map(|(k, &v)| ((false, k.as_str()), v));
        lex.chain(non).collect()
    }

    pub fn merge(&mut self, other: &FactorInventory) {
        for (mine, theirs) in [
            (&mut self.labels, &other.labels),
            (&mut self.lexical_rules, &other.lexical_rules),
            (&mut self.nonlexical_rules, &other.nonlexical_rules),
            (&mut self.words, &other.words),
        ] {
            for (k, v) in theirs {
                *mine.entry(k.clone()).or_insert(0) += v;
            }
        }
    }
}

/// Reads factors off gold trees. With `vocab`, words in lexical rules are
/// mapped to `<unk>` when out of vocabulary; word counts stay raw.
pub fn extract_factors(trees: &[LabeledTree], vocab: Option<&Vocabulary>) -> Result<FactorInventory> {
    if trees.is_empty() {
        return Err(Error::Empty("treebank has no trees".into()));
    }
    let mut inv = FactorInventory::default();
    for (k, tree) in trees.iter().enumerate() {
        visit(tree, &mut inv, vocab).map_err(|msg| Error::Validation {
            location: format!("tree {k}"),
            message: msg,
        })?;
    }
    Ok(inv)
}

fn visit(tree: &LabeledTree, inv: &mut FactorInventory, vocab: Option<&Vocabulary>) -> Result<(), String> {
    let (label, children) = match tree {
        LabeledTree::Word(w) => return Err(format!("bare word {w:?} outside a preterminal")),
        LabeledTree::Node { label, children } => (label, children),
    };
    if label.is_empty() {
        return Err("node without a label".into());
    }
    match children.as_slice() {
        [] => Err(format!("node {label} has no children")),
        [LabeledTree::Word(w)] => {
            *inv.words.entry(w.clone()).or_insert(0) += 1;
            let shown = match vocab {
                Some(v) if !v.contains(w) => UNK,
                _ => w.as_str(),
            };
            *inv.lexical_rules.entry(format!("{label} -> {shown}")).or_insert(0) += 1;
            Ok(())
        }
        kids => {
            *inv.labels.entry(label.clone()).or_insert(0) += 1;
            let mut rhs = Vec::with_capacity(kids.len());
            for c in kids {
                match c.label() {
                    Some(l) if !l.is_empty() => rhs.push(l),
                    _ => return Err(format!("node {label} mixes words and phrases")),
                }
            }
            *inv.nonlexical_rules.entry(format!("{label} -> {}", rhs.join(" "))).or_insert(0) += 1;
            kids.iter().try_for_each(|c| visit(c, inv, vocab))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Factor {
    Labels,
    Rules,
    RulesLexical,
    RulesNonLexical,
    Words,
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Factor::Labels => "labels",
            Factor::Rules => "rules",
            Factor::RulesLexical => "rules-lexical",
            Factor::RulesNonLexical => "rules-non-lexical",
            Factor::Words => "words",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub factor: Factor,
    pub type_rate: f64,
    pub instance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub rows: Vec<OverlapRow>,
}

impl OverlapReport {
    pub fn get(&self, factor: Factor) -> &OverlapRow {
        self.rows.iter().find(|r| r.factor == factor).expect("every factor has a row")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("factor,level,rate\n");
        for r in &self.rows {
            out.push_str(&format!("{},type,{}\n", r.factor, r.type_rate));
            out.push_str(&format!("{},instance,{}\n", r.factor, r.instance_rate));
        }
        out
    }
}

/// Coverage of a test map by a train map. An empty test factor counts as
/// fully covered.
fn coverage<K: Ord>(train: &BTreeMap<K, usize>, test: &BTreeMap<K, usize>) -> (f64, f64) {
    if test.is_empty() {
        return (1.0, 1.0);
    }
    let (mut types, mut inst, mut total) = (0usize, 0usize, 0usize);
    for (k, &c) in test {
        total += c;
        if train.contains_key(k) {
            types += 1;
            inst += c;
        }
    }
    (types as f64 / test.len() as f64, inst as f64 / total as f64)
}

pub fn overlap_rates(train: &FactorInventory, test: &FactorInventory) -> Result<OverlapReport> {
    if test.is_empty() {
        return Err(Error::Empty("test inventory is empty".into()));
    }
    let row = |factor, (type_rate, instance_rate)| OverlapRow {
        factor,
        type_rate,
        instance_rate,
    };
    Ok(OverlapReport {
        rows: vec![
            row(Factor::Labels, coverage(&train.labels, &test.labels)),
            row(Factor::Rules, coverage(&train.rules(), &test.rules())),
            row(Factor::RulesLexical, coverage(&train.lexical_rules, &test.lexical_rules)),
            row(Factor::RulesNonLexical, coverage(&train.nonlexical_rules, &test.nonlexical_rules)),
            row(Factor::Words, coverage(&train.words, &test.words)),
        ],
    })
}

pub const DEFAULT_BUCKET_WIDTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBucketRow {
    pub length_min: usize,
    pub length_max: usize,
    pub unk_count: usize,
    pub sentences: usize,
    pub recognized: usize,
    pub unrecognized: usize,
    /// `recognized / unrecognized`; `+inf` when nothing was missed.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBucketTable {
    pub bucket_width: usize,
    pub rows: Vec<ErrorBucketRow>,
}

impl ErrorBucketTable {
    /// Rows with a finite ratio, the ones usable as correlation inputs.
    pub fn finite_rows(&self) -> impl Iterator<Item = &ErrorBucketRow> {
        self.rows.iter().filter(|r| r.ratio.is_finite())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("length_min,length_max,unk_count,sentences,recognized,unrecognized,ratio\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.length_min, r.length_max, r.unk_count, r.sentences, r.recognized, r.unrecognized, r.ratio
            ));
        }
        out
    }
}

/// Groups records by (length bucket, unknown-token count). Buckets are
/// `bucket_width` lengths wide, starting at the shortest sentence.
pub fn error_buckets(records: &[EvalRecord], bucket_width: usize) -> Result<ErrorBucketTable> {
    if bucket_width < 1 {
        return Err(Error::Config("bucket width must be at least 1".into()));
    }
    let Some(anchor) = records.iter().map(|r| r.length).min() else {
        return Ok(ErrorBucketTable {
            bucket_width,
            rows: Vec::new(),
        });
    };
    let mut groups: BTreeMap<(usize, usize), (usize, usize, usize)> = BTreeMap::new();
    for r in records {
        let hit = r.true_positives();
        let g = groups.entry(((r.length - anchor) / bucket_width, r.unk_count)).or_default();
        g.0 += 1;
        g.1 += hit;
        g.2 += r.gold.len() - hit;
    }
    let rows = groups
        .into_iter()
        .map(|((bucket, unk_count), (sentences, recognized, unrecognized))| {
            let length_min = anchor + bucket * bucket_width;
            ErrorBucketRow {
                length_min,
                length_max: length_min + bucket_width - 1,
                unk_count,
                sentences,
                recognized,
                unrecognized,
                ratio: if unrecognized == 0 {
                    f64::INFINITY
                } else {
                    recognized as f64 / unrecognized as f64
                },
            }
        })
        .collect();
    Ok(ErrorBucketTable { bucket_width, rows })
}

/// Ranks starting at 1, ties sharing their average rank.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn two_sided_t(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

fn check_finite(xs: &[f64], name: &str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Contract(format!("{name} contains non-finite values")))
    }
}

/// Spearman's rho with a two-sided p-value from the t approximation.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::Contract(format!("series lengths differ: {} vs {}", xs.len(), ys.len())));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::Contract(format!("spearman needs at least 3 pairs, got {n}")));
    }
    check_finite(xs, "xs")?;
    check_finite(ys, "ys")?;
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (dx, dy) = (a - mean, b - mean);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateTest("correlation undefined for a constant series".into()));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let t = if rho.abs() == 1.0 {
        f64::INFINITY.copysign(rho)
    } else {
        rho * (df / (1.0 - rho * rho)).sqrt()
    };
    Ok((rho, two_sided_t(t, df)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub t_stat: f64,
    pub p_value: f64,
    pub mean_diff: f64,
    /// Sample standard deviation of the differences.
    pub std_diff: f64,
    pub n: usize,
}

impl PairedTest {
    pub fn rejects_at(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Two-sided paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Contract(format!("paired test needs at least 2 pairs, got {n}")));
    }
    check_finite(a, "a")?;
    check_finite(b, "b")?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(Error::DegenerateTest("differences have zero variance".into()));
    }
    let std = var.sqrt();
    let t = mean / (std / (n as f64).sqrt());
    Ok(PairedTest {
        t_stat: t,
        p_value: two_sided_t(t, (n - 1) as f64),
        mean_diff: mean,
        std_diff: std,
        n,
    })
}
