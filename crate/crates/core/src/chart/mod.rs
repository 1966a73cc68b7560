//! Log-space dynamic programming over the three-schema grammar: inside,
//! outside, span posteriors, expected rule counts, decoders, and a
//! brute-force enumeration oracle.
//!
//! Width-1 spans hold preterminal scores, wider spans hold nonterminal
//! scores. The recurrences are generic over [`LogScalar`] so the same code
//! computes plain values (`f64`) and directional derivatives ([`Dual`]).

mod brute;
mod decode;
mod scalar;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grammar::{RuleTable, Sentence};

pub use brute::{brute_force_best, brute_force_marginal, enumerate_bracketings, BRUTE_FORCE_MAX_N};
pub use decode::{mbr_decode, viterbi_decode};
pub use scalar::{Dual, DualLin, LinValue, LogScalar};

/// Binary rule potentials pre-scaled per parent: `lin[a, bc] = exp(binary[a, bc] - shift[a])`.
#[derive(Debug, Clone)]
pub(crate) struct PreparedRules {
    n_nt: usize,
    n_pt: usize,
    c: usize,
    shift: Vec<f64>,
    lin: Vec<f64>,
}

impl PreparedRules {
    pub(crate) fn new(table: &RuleTable) -> Result<Self> {
        let shape = table.shape()?;
        let (n_nt, n_pt, c) = (
            shape.num_nonterminals,
            shape.num_preterminals,
            shape.num_children(),
        );
        let flat = table
            .binary_logp
            .as_slice()
            .ok_or_else(|| Error::Structural("binary table must be contiguous".into()))?;
        let mut shift = vec![f64::NEG_INFINITY; n_nt];
        let mut lin = vec![0.0; n_nt * c * c];
        for a in 0..n_nt {
            let row = &flat[a * c * c..(a + 1) * c * c];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            shift[a] = m;
            if m > f64::NEG_INFINITY {
                for (dst, &x) in lin[a * c * c..(a + 1) * c * c].iter_mut().zip(row) {
                    *dst = (x - m).exp();
                }
            }
        }
        Ok(Self {
            n_nt,
            n_pt,
            c,
            shift,
            lin,
        })
    }
}

/// Dense `[start, end, slot]` storage for one sentence.
#[derive(Debug, Clone, PartialEq)]
struct Cells<S> {
    n: usize,
    k: usize,
    data: Vec<S>,
}

impl<S: Copy> Cells<S> {
    fn new(n: usize, k: usize, fill: S) -> Self {
        Self {
            n,
            k,
            data: vec![fill; (n + 1) * (n + 1) * k],
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize, s: usize) -> S {
        self.data[(i * (self.n + 1) + j) * self.k + s]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, s: usize, v: S) {
        self.data[(i * (self.n + 1) + j) * self.k + s] = v;
    }
}

/// Additive log-potentials per span of width >= 2.
#[derive(Debug, Clone)]
pub struct SpanPotentials<S> {
    n: usize,
    values: Vec<S>,
}

impl<S: LogScalar> SpanPotentials<S> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![S::constant(0.0); (n + 1) * (n + 1)],
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.values[i * (self.n + 1) + j] = v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.values[i * (self.n + 1) + j]
    }
}

#[inline]
fn pot_at<S: LogScalar>(pot: Option<&SpanPotentials<S>>, i: usize, j: usize) -> S {
    pot.map_or(S::constant(0.0), |p| p.get(i, j))
}

/// Inside scores. `beta(i, i+1, |N| + t)` is `log p(T_t -> w_i)` and
/// `beta(i, j, a)` for `j - i >= 2` the log inside score of nonterminal `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct InsideChartOf<S> {
    n_nt: usize,
    n_pt: usize,
    cells: Cells<S>,
    cell_max: Vec<f64>,
    pub log_marginal: S,
}

pub type InsideChart = InsideChartOf<f64>;

impl<S: LogScalar> InsideChartOf<S> {
    pub fn len(&self) -> usize {
        self.cells.n
    }

    pub fn is_empty(&self) -> bool {
        self.cells.n == 0
    }

    /// Inside score for a symbol of the combined alphabet N ∪ P.
    pub fn beta(&self, i: usize, j: usize, symbol: usize) -> S {
        slot(self.n_nt, self.n_pt, i, j, symbol)
            .map_or(S::neg_inf(), |s| self.cells.at(i, j, s))
    }

    #[inline]
    fn cmax(&self, i: usize, j: usize) -> f64 {
        self.cell_max[i * (self.cells.n + 1) + j]
    }
}

/// Outside scores, indexed like [`InsideChartOf`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutsideChartOf<S> {
    n_nt: usize,
    n_pt: usize,
    cells: Cells<S>,
}

pub type OutsideChart = OutsideChartOf<f64>;

impl<S: LogScalar> OutsideChartOf<S> {
    pub fn len(&self) -> usize {
        self.cells.n
    }

    pub fn is_empty(&self) -> bool {
        self.cells.n == 0
    }

    pub fn alpha(&self, i: usize, j: usize, symbol: usize) -> S {
        slot(self.n_nt, self.n_pt, i, j, symbol)
            .map_or(S::neg_inf(), |s| self.cells.at(i, j, s))
    }
}

fn slot(n_nt: usize, n_pt: usize, i: usize, j: usize, symbol: usize) -> Option<usize> {
    if j == i + 1 {
        (symbol >= n_nt && symbol < n_nt + n_pt).then(|| symbol - n_nt)
    } else if j > i + 1 {
        (symbol < n_nt).then_some(symbol)
    } else {
        None
    }
}

/// Children offsets in the binary child alphabet and their count for a span width.
#[inline]
fn child_range(n_nt: usize, n_pt: usize, width: usize) -> (usize, usize) {
    if width == 1 {
        (n_nt, n_pt)
    } else {
        (0, n_nt)
    }
}

/// Posterior probability that a constituent covers each span of width >= 2.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    n: usize,
    span_post: Vec<f64>,
    pub rule_post: Option<CountTable>,
}

impl PosteriorTable {
    /// Builds a table from explicit values; entries outside width >= 2 are ignored.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut span_post = vec![0.0; (n + 1) * (n + 1)];
        for w in 2..=n {
            for i in 0..=n - w {
                span_post[i * (n + 1) + i + w] = f(i, i + w);
            }
        }
        Self {
            n,
            span_post,
            rule_post: None,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j >= i + 2 && j <= self.n {
            self.span_post[i * (self.n + 1) + j]
        } else {
            0.0
        }
    }

    /// All width>=2 spans with their posterior, in (start, end) order.
    pub fn spans(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| (i + 2..=n).map(move |j| ((i, j), self.get(i, j))))
    }

    pub fn total_mass(&self) -> f64 {
        self.spans().map(|(_, p)| p).sum()
    }
}

/// Expected rule occurrence counts under the tree posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTableOf<L> {
    n_nt: usize,
    n_pt: usize,
    pub tokens: Vec<usize>,
    /// `[|N|]`
    pub start: Vec<L>,
    /// `[|N|, |N|+|P|, |N|+|P|]`, row-major.
    pub binary: Vec<L>,
    /// `[n, |P|]`: preterminal counts per sentence position.
    pub preterm_by_position: Vec<L>,
}

pub type CountTable = CountTableOf<f64>;

impl<L: Copy + LinValue> CountTableOf<L> {
    pub fn start(&self, a: usize) -> L {
        self.start[a]
    }

    pub fn binary(&self, a: usize, b: usize, c: usize) -> L {
        let cc = self.n_nt + self.n_pt;
        self.binary[(a * cc + b) * cc + c]
    }

    pub fn preterm_at(&self, position: usize, t: usize) -> L {
        self.preterm_by_position[position * self.n_pt + t]
    }

    /// Expected count of `T_t -> w`, summed over positions holding `w`.
    pub fn preterm(&self, t: usize, word: usize) -> f64 {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, &w)| w == word)
            .map(|(pos, _)| self.preterm_at(pos, t).primal())
            .sum()
    }

    /// Maps each entry through `f`, e.g. to pull out a tangent.
    pub fn map<M: Copy>(&self, f: impl Fn(L) -> M) -> CountTableOf<M> {
        CountTableOf {
            n_nt: self.n_nt,
            n_pt: self.n_pt,
            tokens: self.tokens.clone(),
            start: self.start.iter().map(|&x| f(x)).collect(),
            binary: self.binary.iter().map(|&x| f(x)).collect(),
            preterm_by_position: self.preterm_by_position.iter().map(|&x| f(x)).collect(),
        }
    }
}

impl CountTable {
    /// Adds `scale * count` into dense `[|P|, |V|]` preterminal storage.
    pub fn add_preterm_into(&self, dense: &mut Array2<f64>, scale: f64) {
        for (pos, &w) in self.tokens.iter().enumerate() {
            for t in 0..self.n_pt {
                dense[[t, w]] += scale * self.preterm_at(pos, t);
            }
        }
    }
}

fn check_input(table: &RuleTable, sentence: &Sentence) -> Result<()> {
    if sentence.len() < 2 {
        return Err(Error::Degenerate(format!(
            "chart parsing needs at least 2 tokens, got {}",
            sentence.len()
        )));
    }
    sentence.check_vocab(table.preterm_logp.ncols())
}

/// Fills the child-pair accumulator for span `(i, j)`:
/// `pair[b, c] = sum_k exp(beta(i,k,b) + beta(k,j,c) - m)`. Returns `m`, or
/// `None` if no split has finite children.
fn fill_pairs<S: LogScalar>(
    prep: &PreparedRules,
    inside: &InsideChartOf<S>,
    i: usize,
    j: usize,
    pair: &mut [S::Lin],
    scratch_left: &mut [S::Lin],
    scratch_right: &mut [S::Lin],
) -> Option<f64> {
    let (n_nt, n_pt, c) = (prep.n_nt, prep.n_pt, prep.c);
    let m = (i + 1..j)
        .map(|s| inside.cmax(i, s) + inside.cmax(s, j))
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return None;
    }
    pair.fill(S::lin_zero());
    for s in i + 1..j {
        let (ml, mr) = (inside.cmax(i, s), inside.cmax(s, j));
        if ml == f64::NEG_INFINITY || mr == f64::NEG_INFINITY {
            continue;
        }
        let scale = (ml + mr - m).exp();
        let (loff, lcount) = child_range(n_nt, n_pt, s - i);
        let (roff, rcount) = child_range(n_nt, n_pt, j - s);
        for b in 0..lcount {
            scratch_left[b] = inside.cells.at(i, s, b).to_lin(ml) * scale;
        }
        for cc in 0..rcount {
            scratch_right[cc] = inside.cells.at(s, j, cc).to_lin(mr);
        }
        for b in 0..lcount {
            let lb = scratch_left[b];
            let row = &mut pair[(loff + b) * c + roff..(loff + b) * c + roff + rcount];
            for (dst, &rc) in row.iter_mut().zip(&scratch_right[..rcount]) {
                *dst = *dst + lb * rc;
            }
        }
    }
    Some(m)
}

pub(crate) fn inside_generic<S: LogScalar>(
    table: &RuleTable,
    prep: &PreparedRules,
    tokens: &[usize],
    pot: Option<&SpanPotentials<S>>,
) -> InsideChartOf<S> {
    let n = tokens.len();
    let (n_nt, n_pt, c) = (prep.n_nt, prep.n_pt, prep.c);
    let k = n_nt.max(n_pt);
    let mut chart = InsideChartOf {
        n_nt,
        n_pt,
        cells: Cells::new(n, k, S::neg_inf()),
        cell_max: vec![f64::NEG_INFINITY; (n + 1) * (n + 1)],
        log_marginal: S::neg_inf(),
    };
    for (i, &w) in tokens.iter().enumerate() {
        let mut mx = f64::NEG_INFINITY;
        for t in 0..n_pt {
            let v = table.preterm_logp[[t, w]];
            chart.cells.set(i, i + 1, t, S::constant(v));
            mx = mx.max(v);
        }
        chart.cell_max[i * (n + 1) + i + 1] = mx;
    }

    let mut pair = vec![S::lin_zero(); c * c];
    let mut left = vec![S::lin_zero(); k];
    let mut right = vec![S::lin_zero(); k];
    for w in 2..=n {
        for i in 0..=n - w {
            let j = i + w;
            let Some(m) = fill_pairs(prep, &chart, i, j, &mut pair, &mut left, &mut right) else {
                continue;
            };
            let phi = pot_at(pot, i, j);
            let mut mx = f64::NEG_INFINITY;
            for a in 0..n_nt {
                if prep.shift[a] == f64::NEG_INFINITY {
                    continue;
                }
                let lin_a = &prep.lin[a * c * c..(a + 1) * c * c];
                let acc = pair
                    .iter()
                    .zip(lin_a)
                    .fold(S::lin_zero(), |acc, (&p, &r)| acc + p * r);
                let v = S::from_lin(acc, m + prep.shift[a]);
                if v.value() > f64::NEG_INFINITY {
                    let v = v + phi;
                    chart.cells.set(i, j, a, v);
                    mx = mx.max(v.value());
                }
            }
            chart.cell_max[i * (n + 1) + j] = mx;
        }
    }

    let roots: Vec<S> = (0..n_nt)
        .map(|a| S::constant(table.start_logp[a]) + chart.cells.at(0, n, a))
        .collect();
    chart.log_marginal = S::log_sum(&roots);
    chart
}

pub(crate) fn outside_generic<S: LogScalar>(
    table: &RuleTable,
    prep: &PreparedRules,
    inside: &InsideChartOf<S>,
    pot: Option<&SpanPotentials<S>>,
) -> OutsideChartOf<S> {
    let n = inside.len();
    let (n_nt, n_pt, c) = (prep.n_nt, prep.n_pt, prep.c);
    let k = n_nt.max(n_pt);
    let mut alpha = Cells::new(n, k, S::neg_inf());
    // outw[(i, j)][b, c] = log sum_a exp(alpha'(i,j,a) + binary[a,b,c])
    let mut outw: Vec<Option<Vec<S>>> = vec![None; (n + 1) * (n + 1)];
    let mut terms: Vec<S> = Vec::new();

    for w in (1..=n).rev() {
        for i in 0..=n - w {
            let j = i + w;
            if (i, j) == (0, n) {
                for a in 0..n_nt {
                    alpha.set(0, n, a, S::constant(table.start_logp[a]));
                }
            } else {
                let (sym_off, nsym) = child_range(n_nt, n_pt, w);
                for x in 0..nsym {
                    terms.clear();
                    // (i, j) as left child of (i, jj), sibling (j, jj)
                    for jj in j + 1..=n {
                        let Some(ow) = &outw[i * (n + 1) + jj] else { continue };
                        let (sib_off, sib_count) = child_range(n_nt, n_pt, jj - j);
                        let row = (sym_off + x) * c + sib_off;
                        for cc in 0..sib_count {
                            let o = ow[row + cc];
                            let b = inside.cells.at(j, jj, cc);
                            if o.value() > f64::NEG_INFINITY && b.value() > f64::NEG_INFINITY {
                                terms.push(o + b);
                            }
                        }
                    }
                    // (i, j) as right child of (h, j), sibling (h, i)
                    for h in 0..i {
                        let Some(ow) = &outw[h * (n + 1) + j] else { continue };
                        let (sib_off, sib_count) = child_range(n_nt, n_pt, i - h);
                        for bb in 0..sib_count {
                            let o = ow[(sib_off + bb) * c + sym_off + x];
                            let b = inside.cells.at(h, i, bb);
                            if o.value() > f64::NEG_INFINITY && b.value() > f64::NEG_INFINITY {
                                terms.push(o + b);
                            }
                        }
                    }
                    alpha.set(i, j, x, S::log_sum(&terms));
                }
            }

            if w >= 2 {
                let phi = pot_at(pot, i, j);
                let shifted: Vec<S> = (0..n_nt).map(|a| alpha.at(i, j, a) + phi).collect();
                let s = (0..n_nt)
                    .map(|a| shifted[a].value() + prep.shift[a])
                    .fold(f64::NEG_INFINITY, f64::max);
                if s == f64::NEG_INFINITY {
                    continue;
                }
                let lin_a: Vec<S::Lin> = (0..n_nt)
                    .map(|a| {
                        if prep.shift[a] == f64::NEG_INFINITY {
                            S::lin_zero()
                        } else {
                            shifted[a].to_lin(s - prep.shift[a])
                        }
                    })
                    .collect();
                let mut ow = vec![S::lin_zero(); c * c];
                for (a, &la) in lin_a.iter().enumerate() {
                    let rules = &prep.lin[a * c * c..(a + 1) * c * c];
                    for (dst, &r) in ow.iter_mut().zip(rules) {
                        *dst = *dst + la * r;
                    }
                }
                outw[i * (n + 1) + j] = Some(ow.into_iter().map(|l| S::from_lin(l, s)).collect());
            }
        }
    }
    OutsideChartOf {
        n_nt,
        n_pt,
        cells: alpha,
    }
}

pub(crate) fn posteriors_generic<S: LogScalar>(
    inside: &InsideChartOf<S>,
    outside: &OutsideChartOf<S>,
) -> Vec<S::Lin> {
    let n = inside.len();
    let log_z = inside.log_marginal;
    let mut out = vec![S::lin_zero(); (n + 1) * (n + 1)];
    for w in 2..=n {
        for i in 0..=n - w {
            let j = i + w;
            let mut acc = S::lin_zero();
            for a in 0..inside.n_nt {
                let b = inside.cells.at(i, j, a);
                let al = outside.cells.at(i, j, a);
                if b.value() > f64::NEG_INFINITY && al.value() > f64::NEG_INFINITY {
                    acc = acc + (al + b - log_z).to_lin(0.0);
                }
            }
            out[i * (n + 1) + j] = acc;
        }
    }
    out
}

pub(crate) fn counts_generic<S: LogScalar>(
    table: &RuleTable,
    prep: &PreparedRules,
    tokens: &[usize],
    inside: &InsideChartOf<S>,
    outside: &OutsideChartOf<S>,
    pot: Option<&SpanPotentials<S>>,
) -> CountTableOf<S::Lin> {
    let n = tokens.len();
    let (n_nt, n_pt, c) = (prep.n_nt, prep.n_pt, prep.c);
    let k = n_nt.max(n_pt);
    let log_z = inside.log_marginal;
    let finite = |x: S| x.value() > f64::NEG_INFINITY;

    let start = (0..n_nt)
        .map(|a| {
            let b = inside.cells.at(0, n, a);
            if finite(b) {
                (S::constant(table.start_logp[a]) + b - log_z).to_lin(0.0)
            } else {
                S::lin_zero()
            }
        })
        .collect();

    let mut preterm = vec![S::lin_zero(); n * n_pt];
    for i in 0..n {
        for t in 0..n_pt {
            let b = inside.cells.at(i, i + 1, t);
            let al = outside.cells.at(i, i + 1, t);
            if finite(b) && finite(al) {
                preterm[i * n_pt + t] = (al + b - log_z).to_lin(0.0);
            }
        }
    }

    let mut binary = vec![S::lin_zero(); n_nt * c * c];
    let mut pair = vec![S::lin_zero(); c * c];
    let mut left = vec![S::lin_zero(); k];
    let mut right = vec![S::lin_zero(); k];
    for w in 2..=n {
        for i in 0..=n - w {
            let j = i + w;
            let Some(m) = fill_pairs(prep, inside, i, j, &mut pair, &mut left, &mut right) else {
                continue;
            };
            let phi = pot_at(pot, i, j);
            for a in 0..n_nt {
                let al = outside.cells.at(i, j, a);
                if !finite(al) || prep.shift[a] == f64::NEG_INFINITY {
                    continue;
                }
                let q = (al + phi + S::constant(prep.shift[a] + m) - log_z).to_lin(0.0);
                let rules = &prep.lin[a * c * c..(a + 1) * c * c];
                let dst = &mut binary[a * c * c..(a + 1) * c * c];
                for ((d, &p), &r) in dst.iter_mut().zip(&pair).zip(rules) {
                    *d = *d + q * p * r;
                }
            }
        }
    }

    CountTableOf {
        n_nt,
        n_pt,
        tokens: tokens.to_vec(),
        start,
        binary,
        preterm_by_position: preterm,
    }
}

/// Inside algorithm; `log_marginal` is `log p(w)`, `-inf` if no parse exists.
pub fn inside(table: &RuleTable, sentence: &Sentence) -> Result<InsideChart> {
    check_input(table, sentence)?;
    let prep = PreparedRules::new(table)?;
    Ok(inside_generic::<f64>(table, &prep, &sentence.tokens, None))
}

/// Outside algorithm over a previously computed inside chart.
pub fn outside(table: &RuleTable, sentence: &Sentence, inside: &InsideChart) -> Result<OutsideChart> {
    check_input(table, sentence)?;
    if inside.len() != sentence.len() {
        return Err(Error::Structural(format!(
            "inside chart covers {} tokens, sentence has {}",
            inside.len(),
            sentence.len()
        )));
    }
    let prep = PreparedRules::new(table)?;
    Ok(outside_generic::<f64>(table, &prep, inside, None))
}

/// Span posteriors `P(constituent over (i, j) | w)` for widths >= 2.
pub fn span_posteriors(inside: &InsideChart, outside: &OutsideChart) -> Result<PosteriorTable> {
    if inside.len() != outside.len() {
        return Err(Error::Structural("inside and outside charts differ in length".into()));
    }
    if !inside.log_marginal.is_finite() {
        return Err(Error::NoParse);
    }
    let n = inside.len();
    Ok(PosteriorTable {
        n,
        span_post: posteriors_generic(inside, outside),
        rule_post: None,
    })
}

/// Expected rule counts, equal to the gradient of `log p(w)` with respect
/// to the rule log-potentials.
pub fn expected_rule_counts(
    table: &RuleTable,
    sentence: &Sentence,
    inside: &InsideChart,
    outside: &OutsideChart,
) -> Result<CountTable> {
    check_input(table, sentence)?;
    if inside.len() != sentence.len() || outside.len() != sentence.len() {
        return Err(Error::Structural("charts do not match the sentence".into()));
    }
    if !inside.log_marginal.is_finite() {
        return Err(Error::NoParse);
    }
    let prep = PreparedRules::new(table)?;
    Ok(counts_generic(table, &prep, &sentence.tokens, inside, outside, None))
}

/// Everything the training loop needs from one sentence's charts.
#[derive(Debug, Clone)]
pub struct SentenceAnalysis {
    pub log_marginal: f64,
    pub posteriors: PosteriorTable,
    pub counts: CountTable,
}

/// Inside, outside, posteriors and counts in one pass.
pub fn analyze_sentence(table: &RuleTable, sentence: &Sentence) -> Result<SentenceAnalysis> {
    check_input(table, sentence)?;
    let prep = PreparedRules::new(table)?;
    let ins = inside_generic::<f64>(table, &prep, &sentence.tokens, None);
    if !ins.log_marginal.is_finite() {
        return Err(Error::NoParse);
    }
    let outs = outside_generic::<f64>(table, &prep, &ins, None);
    let posteriors = PosteriorTable {
        n: sentence.len(),
        span_post: posteriors_generic(&ins, &outs),
        rule_post: None,
    };
    let counts = counts_generic(table, &prep, &sentence.tokens, &ins, &outs, None);
    Ok(SentenceAnalysis {
        log_marginal: ins.log_marginal,
        posteriors,
        counts,
    })
}

/// Gradient of `sum_{(i,j)} weight(i,j) * span_post(i,j)` with respect to
/// every rule log-potential, computed exactly by forward-mode
/// differentiation of the expected counts along the span-potential direction.
pub fn weighted_posterior_gradient(
    table: &RuleTable,
    sentence: &Sentence,
    weights: &PosteriorTable,
) -> Result<CountTable> {
    check_input(table, sentence)?;
    let n = sentence.len();
    if weights.len() != n {
        return Err(Error::Structural("span weights do not match the sentence".into()));
    }
    let prep = PreparedRules::new(table)?;
    let mut pot = SpanPotentials::<Dual>::zeros(n);
    for ((i, j), g) in weights.spans() {
        pot.set(i, j, Dual::new(0.0, g));
    }
    let ins = inside_generic::<Dual>(table, &prep, &sentence.tokens, Some(&pot));
    if !ins.log_marginal.value.is_finite() {
        return Err(Error::NoParse);
    }
    let outs = outside_generic::<Dual>(table, &prep, &ins, Some(&pot));
    let counts = counts_generic(table, &prep, &sentence.tokens, &ins, &outs, Some(&pot));
    Ok(counts.map(|l| l.dp))
}
