//! Forward and backward passes of the rule scorers and the latent encoder.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};

use super::{ParameterSet, ResidualMlp};
use crate::error::{Error, Result};
use crate::grammar::{RuleTable, Sentence};

pub(crate) struct MlpCache {
    q: Array2<f64>,
    t: Array2<f64>,
    h: Array2<f64>,
}

fn mlp_forward(mlp: &ResidualMlp, u: ArrayView2<f64>, z: Option<&Array1<f64>>) -> MlpCache {
    let mut q = u.to_owned();
    if let Some(z) = z.filter(|z| !z.is_empty()) {
        q += &mlp.z_proj.dot(z);
    }
    let t = (q.dot(&mlp.w1.t()) + &mlp.b1).mapv_into(f64::tanh);
    let h = &q + &t.dot(&mlp.w2.t()) + &mlp.b2;
    MlpCache { q, t, h }
}

fn mlp_backward(
    mlp: &ResidualMlp,
    cache: &MlpCache,
    dh: &Array2<f64>,
    z: Option<&Array1<f64>>,
    grad: &mut ResidualMlp,
    mut du: ArrayViewMut2<f64>,
    dz: Option<&mut Array1<f64>>,
) {
    grad.w2 += &dh.t().dot(&cache.t);
    grad.b2 += &dh.sum_axis(Axis(0));
    let mut da = dh.dot(&mlp.w2);
    Zip::from(&mut da).and(&cache.t).for_each(|d, &t| *d *= 1.0 - t * t);
    grad.w1 += &da.t().dot(&cache.q);
    grad.b1 += &da.sum_axis(Axis(0));
    let dq = dh + &da.dot(&mlp.w1);
    du += &dq;
    if let (Some(z), Some(dz)) = (z.filter(|z| !z.is_empty()), dz) {
        let total = dq.sum_axis(Axis(0));
        grad.z_proj += &outer(&total, z);
        *dz += &mlp.z_proj.t().dot(&total);
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

fn log_softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
pub(crate) struct RuleCache {
    start: MlpCache,
    binary: MlpCache,
    preterm: MlpCache,
    /// `[|P|, d_word]`: preterminal states mapped into word space.
    x: Array2<f64>,
    pub(crate) table: RuleTable,
}

/// Gradient of a loss with respect to the normalized rule log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RuleGrad {
    pub start: Array1<f64>,
    /// `[|N|, (|N|+|P|)^2]`
    pub binary: Array2<f64>,
    /// `[|P|, |V|]`
    pub preterm: Array2<f64>,
}

impl RuleGrad {
    pub(crate) fn zeros(params: &ParameterSet) -> Self {
        let d = &params.dims;
        let c = d.num_children();
        Self {
            start: Array1::zeros(d.num_nonterminals),
            binary: Array2::zeros((d.num_nonterminals, c * c)),
            preterm: Array2::zeros((d.num_preterminals, d.vocab_size)),
        }
    }

    pub(crate) fn add_counts(&mut self, counts: &crate::chart::CountTable, scale: f64) {
        for (dst, &c) in self.start.iter_mut().zip(&counts.start) {
            *dst += scale * c;
        }
        for (dst, &c) in self
            .binary
            .as_slice_mut()
            .expect("standard layout")
            .iter_mut()
            .zip(&counts.binary)
        {
            *dst += scale * c;
        }
        counts.add_preterm_into(&mut self.preterm, scale);
    }

    pub(crate) fn add(&mut self, other: &RuleGrad) {
        self.start += &other.start;
        self.binary += &other.binary;
        self.preterm += &other.preterm;
    }
}

fn check_latent(params: &ParameterSet, z: Option<&Array1<f64>>) -> Result<()> {
    if let Some(z) = z {
        if z.len() != params.dims.d_z {
            return Err(Error::Structural(format!(
                "latent vector has dimension {}, expected {}",
                z.len(),
                params.dims.d_z
            )));
        }
    }
    Ok(())
}

fn check_params(params: &ParameterSet) -> Result<()> {
    let d = &params.dims;
    let c = d.num_children();
    let w = &params.scorer_weights;
    let ok = params.symbol_embeddings.dim() == (1 + c, d.d_sym)
        && params.word_embeddings.dim() == (d.vocab_size, d.d_word)
        && w.start_out.dim() == (d.num_nonterminals, d.d_sym)
        && w.binary_out.dim() == (c * c, d.d_sym)
        && w.word_proj.dim() == (d.d_sym, d.d_word)
        && [&w.start, &w.binary, &w.preterm]
            .iter()
            .all(|m| m.z_proj.dim() == (d.d_sym, d.d_z) && m.w1.dim() == (d.d_sym, d.d_sym));
    if ok {
        Ok(())
    } else {
        Err(Error::Structural("parameter shapes disagree with the model dimensions".into()))
    }
}

pub(crate) fn forward(params: &ParameterSet, z: Option<&Array1<f64>>) -> Result<RuleCache> {
    check_latent(params, z)?;
    check_params(params)?;
    let d = &params.dims;
    let (n_nt, c) = (d.num_nonterminals, d.num_children());
    let w = &params.scorer_weights;
    let sym = &params.symbol_embeddings;

    let start = mlp_forward(&w.start, sym.slice(s![0..1, ..]), z);
    let mut start_scores = start.h.dot(&w.start_out.t()) + &w.start_bias;
    log_softmax_rows(&mut start_scores);

    let binary = mlp_forward(&w.binary, sym.slice(s![1..1 + n_nt, ..]), z);
    let mut binary_scores = binary.h.dot(&w.binary_out.t()) + &w.binary_bias;
    log_softmax_rows(&mut binary_scores);

    let preterm = mlp_forward(&w.preterm, sym.slice(s![1 + n_nt.., ..]), z);
    let x = preterm.h.dot(&w.word_proj);
    let mut preterm_scores = x.dot(&params.word_embeddings.t());
    log_softmax_rows(&mut preterm_scores);

    let table = RuleTable {
        start_logp: start_scores.index_axis_move(Axis(0), 0),
        binary_logp: binary_scores
            .into_shape_with_order((n_nt, c, c))
            .expect("row-major reshape"),
        preterm_logp: preterm_scores,
    };
    Ok(RuleCache {
        start,
        binary,
        preterm,
        x,
        table,
    })
}

/// `dL/dscore` from `dL/dlogp` through a row-wise log-softmax.
fn softmax_backward(logp: ArrayView2<f64>, g: ArrayView2<f64>) -> Array2<f64> {
    let mut out = g.to_owned();
    for (mut row, lp) in out.rows_mut().into_iter().zip(logp.rows()) {
        let total = row.sum();
        Zip::from(&mut row).and(&lp).for_each(|d, &l| *d -= l.exp() * total);
    }
    out
}

/// Accumulates parameter gradients for one forward pass; returns `dL/dz`
/// when a latent vector was used.
pub(crate) fn backward(
    params: &ParameterSet,
    cache: &RuleCache,
    dlogp: &RuleGrad,
    z: Option<&Array1<f64>>,
    grads: &mut ParameterSet,
) -> Option<Array1<f64>> {
    let d = &params.dims;
    let n_nt = d.num_nonterminals;
    let w = &params.scorer_weights;
    let table = &cache.table;
    let mut dz = z.map(|z| Array1::zeros(z.len()));

    let start_lp = table.start_logp.view().insert_axis(Axis(0));
    let ds = softmax_backward(start_lp, dlogp.start.view().insert_axis(Axis(0)));
    grads.scorer_weights.start_out += &ds.t().dot(&cache.start.h);
    grads.scorer_weights.start_bias += &ds.row(0);
    let dh = ds.dot(&w.start_out);
    mlp_backward(
        &w.start,
        &cache.start,
        &dh,
        z,
        &mut grads.scorer_weights.start,
        grads.symbol_embeddings.slice_mut(s![0..1, ..]),
        dz.as_mut(),
    );

    let c = d.num_children();
    let binary_lp = table
        .binary_logp
        .view()
        .into_shape_with_order((n_nt, c * c))
        .expect("row-major reshape");
    let ds = softmax_backward(binary_lp, dlogp.binary.view());
    grads.scorer_weights.binary_out += &ds.t().dot(&cache.binary.h);
    grads.scorer_weights.binary_bias += &ds.sum_axis(Axis(0));
    let dh = ds.dot(&w.binary_out);
    mlp_backward(
        &w.binary,
        &cache.binary,
        &dh,
        z,
        &mut grads.scorer_weights.binary,
        grads.symbol_embeddings.slice_mut(s![1..1 + n_nt, ..]),
        dz.as_mut(),
    );

    let ds = softmax_backward(table.preterm_logp.view(), dlogp.preterm.view());
    let dx = ds.dot(&params.word_embeddings);
    if !params.word_embeddings_frozen {
        grads.word_embeddings += &ds.t().dot(&cache.x);
    }
    grads.scorer_weights.word_proj += &cache.preterm.h.t().dot(&dx);
    let dh = dx.dot(&w.word_proj.t());
    mlp_backward(
        &w.preterm,
        &cache.preterm,
        &dh,
        z,
        &mut grads.scorer_weights.preterm,
        grads.symbol_embeddings.slice_mut(s![1 + n_nt.., ..]),
        dz.as_mut(),
    );
    dz
}

/// Normalized rule table from the scorers, conditioned on `z` when given.
pub fn compute_rule_table(params: &ParameterSet, z: Option<&Array1<f64>>) -> Result<RuleTable> {
    Ok(forward(params, z)?.table)
}

pub(crate) fn mean_word_vector(params: &ParameterSet, sentence: &Sentence) -> Result<Array1<f64>> {
    if sentence.is_empty() {
        return Err(Error::Degenerate("cannot encode an empty sentence".into()));
    }
    params.check_sentence(sentence)?;
    let mut m = Array1::zeros(params.dims.d_word);
    for &t in &sentence.tokens {
        m += &params.word_embeddings.row(t);
    }
    m /= sentence.len() as f64;
    Ok(m)
}

/// Posterior mean and log-variance of the sentence latent.
pub fn encode_latent(params: &ParameterSet, sentence: &Sentence) -> Result<(Array1<f64>, Array1<f64>)> {
    if params.dims.d_z == 0 {
        return Err(Error::Mode("latent encoding requires d_z > 0".into()));
    }
    let m = mean_word_vector(params, sentence)?;
    let e = &params.latent_encoder;
    Ok((e.mu_weight.dot(&m) + &e.mu_bias, e.logvar_weight.dot(&m) + &e.logvar_bias))
}

pub(crate) fn encoder_backward(
    params: &ParameterSet,
    sentence: &Sentence,
    mean: &Array1<f64>,
    dmu: &Array1<f64>,
    dlogvar: &Array1<f64>,
    grads: &mut ParameterSet,
) {
    let e = &params.latent_encoder;
    let g = &mut grads.latent_encoder;
    g.mu_weight += &outer(dmu, mean);
    g.mu_bias += dmu;
    g.logvar_weight += &outer(dlogvar, mean);
    g.logvar_bias += dlogvar;
    if !params.word_embeddings_frozen {
        let dm = (e.mu_weight.t().dot(dmu) + e.logvar_weight.t().dot(dlogvar)) / sentence.len() as f64;
        for &t in &sentence.tokens {
            let mut row = grads.word_embeddings.row_mut(t);
            row += &dm;
        }
    }
}
