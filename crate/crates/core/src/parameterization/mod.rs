//! Neural rule scorers that map symbol and word embeddings (and an optional
//! per-sentence latent vector) to a normalized [`RuleTable`], the training
//! loss with hand-derived gradients, and the Adam optimizer.

mod loss;
mod optim;
mod scorer;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{GrammarShape, RuleTable, Sentence};
use crate::grounding::{GroundingProjection, DEFAULT_MARGIN};

pub use loss::{kl_standard_normal, loss_and_gradients, Example, LossBreakdown};
pub use optim::{update_parameters, AdamState};
pub use scorer::{compute_rule_table, encode_latent};

/// Sizes of every parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_nonterminals: usize,
    pub num_preterminals: usize,
    pub vocab_size: usize,
    pub d_sym: usize,
    pub d_word: usize,
    pub d_z: usize,
    pub d_img: usize,
}

impl ModelDims {
    pub fn grammar_shape(&self) -> Result<GrammarShape> {
        GrammarShape::new(self.num_nonterminals, self.num_preterminals, self.vocab_size)
    }

    pub fn num_children(&self) -> usize {
        self.num_nonterminals + self.num_preterminals
    }

    pub fn validate(&self) -> Result<()> {
        self.grammar_shape()?;
        if self.d_sym == 0 || self.d_word == 0 {
            return Err(Error::Config("d_sym and d_word must be positive".into()));
        }
        Ok(())
    }
}

/// Two-layer residual perceptron shared by the symbols of one rule family:
/// `q = u + Z z`, `h = q + W2 tanh(W1 q + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualMlp {
    /// `[d_sym, d_z]`
    pub z_proj: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ResidualMlp {
    fn zeros(d_sym: usize, d_z: usize) -> Self {
        Self {
            z_proj: Array2::zeros((d_sym, d_z)),
            w1: Array2::zeros((d_sym, d_sym)),
            b1: Array1::zeros(d_sym),
            w2: Array2::zeros((d_sym, d_sym)),
            b2: Array1::zeros(d_sym),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerWeights {
    pub start: ResidualMlp,
    pub binary: ResidualMlp,
    pub preterm: ResidualMlp,
    /// `[|N|, d_sym]`: one output vector per start child.
    pub start_out: Array2<f64>,
    pub start_bias: Array1<f64>,
    /// `[(|N|+|P|)^2, d_sym]`: one output vector per ordered child pair.
    pub binary_out: Array2<f64>,
    pub binary_bias: Array1<f64>,
    /// `[d_sym, d_word]`: maps word embeddings into symbol space.
    pub word_proj: Array2<f64>,
}

/// Mean word embedding followed by affine maps to `mu` and `logvar`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEncoder {
    /// `[d_z, d_word]`
    pub mu_weight: Array2<f64>,
    pub mu_bias: Array1<f64>,
    pub logvar_weight: Array2<f64>,
    pub logvar_bias: Array1<f64>,
}

/// Every learnable block. Row 0 of `symbol_embeddings` is the start symbol,
/// rows `1..=|N|` the nonterminals, and the remaining `|P|` rows the
/// preterminals. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub dims: ModelDims,
    pub symbol_embeddings: Array2<f64>,
    pub word_embeddings: Array2<f64>,
    pub word_embeddings_frozen: bool,
    pub scorer_weights: ScorerWeights,
    pub latent_encoder: LatentEncoder,
    pub grounding_projection: GroundingProjection,
}

impl ParameterSet {
    pub fn zeros(dims: ModelDims) -> Self {
        let (n_nt, c, d, dw, dz) = (
            dims.num_nonterminals,
            dims.num_children(),
            dims.d_sym,
            dims.d_word,
            dims.d_z,
        );
        Self {
            dims,
            symbol_embeddings: Array2::zeros((1 + c, d)),
            word_embeddings: Array2::zeros((dims.vocab_size, dw)),
            word_embeddings_frozen: false,
            scorer_weights: ScorerWeights {
                start: ResidualMlp::zeros(d, dz),
                binary: ResidualMlp::zeros(d, dz),
                preterm: ResidualMlp::zeros(d, dz),
                start_out: Array2::zeros((n_nt, d)),
                start_bias: Array1::zeros(n_nt),
                binary_out: Array2::zeros((c * c, d)),
                binary_bias: Array1::zeros(c * c),
                word_proj: Array2::zeros((d, dw)),
            },
            latent_encoder: LatentEncoder {
                mu_weight: Array2::zeros((dz, dw)),
                mu_bias: Array1::zeros(dz),
                logvar_weight: Array2::zeros((dz, dw)),
                logvar_bias: Array1::zeros(dz),
            },
            grounding_projection: GroundingProjection::zeros(dims.d_img, dw),
        }
    }

    /// Xavier-uniform matrices and zero biases, drawn from `seed` in a fixed
    /// tensor order.
    pub fn random(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut params = Self::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, shape, data) in params.tensors_mut() {
            if name.ends_with("bias") || name.ends_with(".b1") || name.ends_with(".b2") {
                continue;
            }
            let (rows, cols) = shape;
            if rows == 0 || cols == 0 {
                continue;
            }
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for x in data.iter_mut() {
                *x = dist.sample(&mut rng);
            }
        }
        Ok(params)
    }

    /// Replaces the word table, e.g. with pre-trained vectors.
    pub fn with_word_embeddings(mut self, table: Array2<f64>, frozen: bool) -> Result<Self> {
        if table.dim() != (self.dims.vocab_size, self.dims.d_word) {
            return Err(Error::Structural(format!(
                "word table is {:?}, expected {:?}",
                table.dim(),
                (self.dims.vocab_size, self.dims.d_word)
            )));
        }
        if table.iter().any(|x| !x.is_finite()) {
            return Err(Error::Structural("word table has non-finite entries".into()));
        }
        self.word_embeddings = table.as_standard_layout().into_owned();
        self.word_embeddings_frozen = frozen;
        Ok(self)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.dims);
        z.word_embeddings_frozen = self.word_embeddings_frozen;
        z
    }

    /// Named flat views of every tensor in a fixed order, with `(rows, cols)`.
    pub fn tensors(&self) -> Vec<(String, (usize, usize), &[f64])> {
        let s = &self.scorer_weights;
        let e = &self.latent_encoder;
        let g = &self.grounding_projection;
        let mut out: Vec<(String, (usize, usize), &[f64])> = vec![
            entry2("symbol_embeddings", &self.symbol_embeddings),
            entry2("word_embeddings", &self.word_embeddings),
        ];
        for (family, mlp) in [("start", &s.start), ("binary", &s.binary), ("preterm", &s.preterm)] {
            out.push(entry2(&format!("scorer.{family}.z_proj"), &mlp.z_proj));
            out.push(entry2(&format!("scorer.{family}.w1"), &mlp.w1));
            out.push(entry1(&format!("scorer.{family}.b1"), &mlp.b1));
            out.push(entry2(&format!("scorer.{family}.w2"), &mlp.w2));
            out.push(entry1(&format!("scorer.{family}.b2"), &mlp.b2));
        }
        out.extend([
            entry2("scorer.start_out", &s.start_out),
            entry1("scorer.start_bias", &s.start_bias),
            entry2("scorer.binary_out", &s.binary_out),
            entry1("scorer.binary_bias", &s.binary_bias),
            entry2("scorer.word_proj", &s.word_proj),
            entry2("encoder.mu_weight", &e.mu_weight),
            entry1("encoder.mu_bias", &e.mu_bias),
            entry2("encoder.logvar_weight", &e.logvar_weight),
            entry1("encoder.logvar_bias", &e.logvar_bias),
            entry2("grounding.weight", &g.weight),
            entry1("grounding.bias", &g.bias),
        ]);
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, (usize, usize), &mut [f64])> {
        let ParameterSet {
            symbol_embeddings,
            word_embeddings,
            scorer_weights: s,
            latent_encoder: e,
            grounding_projection: g,
            ..
        } = self;
        let mut out = vec![
            entry2_mut("symbol_embeddings", symbol_embeddings),
            entry2_mut("word_embeddings", word_embeddings),
        ];
        for (family, mlp) in [
            ("start", &mut s.start),
            ("binary", &mut s.binary),
            ("preterm", &mut s.preterm),
        ] {
            let ResidualMlp {
                z_proj,
                w1,
                b1,
                w2,
                b2,
            } = mlp;
            out.push(entry2_mut(&format!("scorer.{family}.z_proj"), z_proj));
            out.push(entry2_mut(&format!("scorer.{family}.w1"), w1));
            out.push(entry1_mut(&format!("scorer.{family}.b1"), b1));
            out.push(entry2_mut(&format!("scorer.{family}.w2"), w2));
            out.push(entry1_mut(&format!("scorer.{family}.b2"), b2));
        }
        out.extend([
            entry2_mut("scorer.start_out", &mut s.start_out),
            entry1_mut("scorer.start_bias", &mut s.start_bias),
            entry2_mut("scorer.binary_out", &mut s.binary_out),
            entry1_mut("scorer.binary_bias", &mut s.binary_bias),
            entry2_mut("scorer.word_proj", &mut s.word_proj),
            entry2_mut("encoder.mu_weight", &mut e.mu_weight),
            entry1_mut("encoder.mu_bias", &mut e.mu_bias),
            entry2_mut("encoder.logvar_weight", &mut e.logvar_weight),
            entry1_mut("encoder.logvar_bias", &mut e.logvar_bias),
            entry2_mut("grounding.weight", &mut g.weight),
            entry1_mut("grounding.bias", &mut g.bias),
        ]);
        out
    }

    /// Total number of scalars.
    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ParameterSet, scale: f64) -> Result<()> {
        self.check_congruent(other)?;
        for ((_, _, dst), (_, _, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
        Ok(())
    }

    pub fn check_congruent(&self, other: &ParameterSet) -> Result<()> {
        let a = self.tensors();
        let b = other.tensors();
        if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.1 != y.1) {
            return Err(Error::Structural("parameter sets have different shapes".into()));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, d)| d.iter().all(|x| x.is_finite()))
    }

    /// Stable checksum of every value's bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for (_, _, data) in self.tensors() {
            for x in data {
                h ^= x.to_bits();
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    /// The rule table used when no latent vector is supplied.
    pub fn rule_table(&self) -> Result<RuleTable> {
        compute_rule_table(self, None)
    }

    pub(crate) fn check_sentence(&self, sentence: &Sentence) -> Result<()> {
        sentence.check_vocab(self.dims.vocab_size)
    }
}

fn entry1<'a>(name: &str, a: &'a Array1<f64>) -> (String, (usize, usize), &'a [f64]) {
    (name.to_string(), (1, a.len()), a.as_slice().expect("standard layout"))
}

fn entry2<'a>(name: &str, a: &'a Array2<f64>) -> (String, (usize, usize), &'a [f64]) {
    (name.to_string(), a.dim(), a.as_slice().expect("standard layout"))
}

fn entry1_mut<'a>(name: &str, a: &'a mut Array1<f64>) -> (String, (usize, usize), &'a mut [f64]) {
    (name.to_string(), (1, a.len()), a.as_slice_mut().expect("standard layout"))
}

fn entry2_mut<'a>(name: &str, a: &'a mut Array2<f64>) -> (String, (usize, usize), &'a mut [f64]) {
    let dim = a.dim();
    (name.to_string(), dim, a.as_slice_mut().expect("standard layout"))
}

/// Optimization and objective settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Weight of the grounding hinge loss.
    pub alpha: f64,
    /// Latent dimension; 0 disables the compound latent.
    pub d_z: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Model-initialization and latent-noise seed.
    pub rng_seed: u64,
    pub margin: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            d_z: 32,
            learning_rate: 1e-3,
            batch_size: 8,
            max_epochs: 15,
            rng_seed: 0,
            margin: DEFAULT_MARGIN,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config("margin must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
