use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scorer::{backward, encoder_backward, forward, mean_word_vector, RuleCache, RuleGrad};
use super::{ParameterSet, TrainingConfig};
use crate::chart::{analyze_sentence, weighted_posterior_gradient, PosteriorTable, SentenceAnalysis};
use crate::error::{Error, Result};
use crate::grammar::Sentence;
use crate::grounding::{cosine, cosine_and_grad, expected_match_score, hinge_loss_and_grad, SpanReps};

/// One training sentence with its aligned image vector, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub sentence: Sentence,
    pub image: Option<Array1<f64>>,
}

impl Example {
    pub fn text(sentence: Sentence) -> Self {
        Self { sentence, image: None }
    }
}

/// Batch-mean loss terms. `total = lm_loss + kl_term + alpha * grounding_loss`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lm_loss: f64,
    pub kl_term: f64,
    pub grounding_loss: f64,
    pub total: f64,
}

/// `KL(N(mu, exp(logvar)) || N(0, I))`.
pub fn kl_standard_normal(mu: &Array1<f64>, logvar: &Array1<f64>) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

struct Latent {
    mean: Array1<f64>,
    mu: Array1<f64>,
    logvar: Array1<f64>,
    eps: Array1<f64>,
    z: Array1<f64>,
}

struct Forward {
    latent: Option<Latent>,
    cache: Option<RuleCache>,
    analysis: SentenceAnalysis,
    reps: Option<SpanReps>,
}

/// Standard-normal noise for sentence `k` of a batch: one independent stream
/// per position so the draw does not depend on scheduling.
fn latent_noise(seed: u64, k: usize, d_z: usize) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    Array1::from_shape_fn(d_z, |_| StandardNormal.sample(&mut rng))
}

fn word_rows(params: &ParameterSet, sentence: &Sentence) -> Array2<f64> {
    params.word_embeddings.select(Axis(0), &sentence.tokens)
}

/// Batch loss and its gradient with respect to every parameter.
///
/// With `d_z > 0` one reparameterized latent is drawn per sentence from
/// `rng_seed` and `lm_loss` is the reconstruction term of the single-sample
/// ELBO. The hinge loss runs over the sentences that carry an image; it is
/// skipped when `alpha == 0`. A non-finite loss is reported as a training
/// fault with batch index 0, which the caller replaces with its own index.
pub fn loss_and_gradients(
    params: &ParameterSet,
    batch: &[Example],
    config: &TrainingConfig,
    rng_seed: u64,
) -> Result<(LossBreakdown, ParameterSet)> {
    if batch.is_empty() {
        return Err(Error::Contract("loss_and_gradients needs a non-empty batch".into()));
    }
    if config.d_z != params.dims.d_z {
        return Err(Error::Config(format!(
            "config d_z = {} but parameters have d_z = {}",
            config.d_z, params.dims.d_z
        )));
    }
    for ex in batch {
        if ex.sentence.len() < 2 {
            return Err(Error::Degenerate("training sentences need at least 2 tokens".into()));
        }
        params.check_sentence(&ex.sentence)?;
    }
    let grounded: Vec<usize> = if config.alpha > 0.0 {
        (0..batch.len()).filter(|&k| batch[k].image.is_some()).collect()
    } else {
        Vec::new()
    };
    for &k in &grounded {
        let dim = batch[k].image.as_ref().map_or(0, |v| v.len());
        if dim != params.dims.d_img {
            return Err(Error::Structural(format!(
                "image vector has dimension {dim}, expected {}",
                params.dims.d_img
            )));
        }
    }
    let mut slot = vec![None; batch.len()];
    for (b, &k) in grounded.iter().enumerate() {
        slot[k] = Some(b);
    }

    let d_z = params.dims.d_z;
    let shared = if d_z == 0 { Some(forward(params, None)?) } else { None };
    let forwards: Vec<Forward> = batch
        .par_iter()
        .enumerate()
        .map(|(k, ex)| -> Result<Forward> {
            let (latent, cache) = if d_z > 0 {
                let mean = mean_word_vector(params, &ex.sentence)?;
                let enc = &params.latent_encoder;
                let mu = enc.mu_weight.dot(&mean) + &enc.mu_bias;
                let logvar = enc.logvar_weight.dot(&mean) + &enc.logvar_bias;
                let eps = latent_noise(rng_seed, k, d_z);
                let z = &mu + &(logvar.mapv(|lv| (0.5 * lv).exp()) * &eps);
                let cache = forward(params, Some(&z))?;
                (
                    Some(Latent {
                        mean,
                        mu,
                        logvar,
                        eps,
                        z,
                    }),
                    Some(cache),
                )
            } else {
                (None, None)
            };
            let table = &cache.as_ref().or(shared.as_ref()).expect("a rule cache").table;
            let analysis = analyze_sentence(table, &ex.sentence)?;
            let reps = if slot[k].is_some() {
                Some(SpanReps::compute(
                    &params.grounding_projection,
                    word_rows(params, &ex.sentence).view(),
                )?)
            } else {
                None
            };
            Ok(Forward {
                latent,
                cache,
                analysis,
                reps,
            })
        })
        .collect::<Result<_>>()?;

    let scale = 1.0 / batch.len() as f64;
    let lm_loss = -scale * forwards.iter().map(|f| f.analysis.log_marginal).sum::<f64>();
    let kl_term = scale
        * forwards
            .iter()
            .filter_map(|f| f.latent.as_ref())
            .map(|l| kl_standard_normal(&l.mu, &l.logvar))
            .sum::<f64>();

    let (grounding_loss, dscores) = if grounded.is_empty() {
        (0.0, Array2::zeros((0, 0)))
    } else {
        let g = grounded.len();
        let mut scores = Array2::zeros((g, g));
        for (a, &ka) in grounded.iter().enumerate() {
            let image = batch[ka].image.as_ref().expect("grounded");
            for (b, &kb) in grounded.iter().enumerate() {
                let f = &forwards[kb];
                scores[[a, b]] = expected_match_score(
                    image.view(),
                    &f.analysis.posteriors,
                    f.reps.as_ref().expect("grounded"),
                )?;
            }
        }
        let (loss, grad) = hinge_loss_and_grad(&scores, config.margin)?;
        (loss, grad * config.alpha)
    };

    let total = lm_loss + kl_term + config.alpha * grounding_loss;
    if !total.is_finite() {
        return Err(Error::TrainingFault {
            batch: 0,
            message: format!("non-finite loss (lm {lm_loss}, kl {kl_term}, grounding {grounding_loss})"),
        });
    }

    let images: Vec<Vec<f64>> = grounded
        .iter()
        .map(|&k| batch[k].image.as_ref().expect("grounded").to_vec())
        .collect();
    let partials: Vec<(Option<RuleGrad>, Option<ParameterSet>)> = batch
        .par_iter()
        .zip(&forwards)
        .enumerate()
        .map(|(k, (ex, f))| -> Result<_> {
            let mut rule_grad = RuleGrad::zeros(params);
            rule_grad.add_counts(&f.analysis.counts, -scale);
            let mut local: Option<ParameterSet> = None;
            if let Some(b) = slot[k] {
                let reps = f.reps.as_ref().expect("grounded");
                let table = &f.cache.as_ref().or(shared.as_ref()).expect("a rule cache").table;
                let weights = PosteriorTable::from_fn(ex.sentence.len(), |i, j| {
                    images
                        .iter()
                        .enumerate()
                        .map(|(a, v)| dscores[[a, b]] * cosine(v, reps.get(i, j)))
                        .sum()
                });
                let wpg = weighted_posterior_gradient(table, &ex.sentence, &weights)?;
                rule_grad.add_counts(&wpg, 1.0);
                let grads = local.get_or_insert_with(|| params.zeros_like());
                grounding_backward(params, ex, f, &images, dscores.column(b).to_vec(), grads);
            }
            if let Some(lat) = &f.latent {
                let grads = local.get_or_insert_with(|| params.zeros_like());
                let cache = f.cache.as_ref().expect("per-sentence cache");
                let dz = backward(params, cache, &rule_grad, Some(&lat.z), grads).expect("latent used");
                let dmu = &dz + &(&lat.mu * scale);
                let dlogvar = Array1::from_shape_fn(d_z, |i| {
                    dz[i] * 0.5 * (0.5 * lat.logvar[i]).exp() * lat.eps[i]
                        + scale * 0.5 * (lat.logvar[i].exp() - 1.0)
                });
                encoder_backward(params, &ex.sentence, &lat.mean, &dmu, &dlogvar, grads);
                Ok((None, local))
            } else {
                Ok((Some(rule_grad), local))
            }
        })
        .collect::<Result<_>>()?;

    let mut grads = params.zeros_like();
    let mut pooled: Option<RuleGrad> = None;
    for (rule_grad, local) in partials {
        if let Some(rg) = rule_grad {
            match pooled.as_mut() {
                Some(p) => p.add(&rg),
                None => pooled = Some(rg),
            }
        }
        if let Some(local) = local {
            grads.add_scaled(&local, 1.0)?;
        }
    }
    if let (Some(rg), Some(cache)) = (pooled, shared.as_ref()) {
        backward(params, cache, &rg, None, &mut grads);
    }
    if params.word_embeddings_frozen {
        grads.word_embeddings.fill(0.0);
    }
    if !grads.all_finite() {
        return Err(Error::TrainingFault {
            batch: 0,
            message: "non-finite gradient".into(),
        });
    }
    Ok((
        LossBreakdown {
            lm_loss,
            kl_term,
            grounding_loss,
            total,
        },
        grads,
    ))
}

/// Gradient of the grounding term through the span representations.
/// `dscore[a]` is the loss gradient for image `a` scored against this sentence.
fn grounding_backward(
    params: &ParameterSet,
    ex: &Example,
    f: &Forward,
    images: &[Vec<f64>],
    dscore: Vec<f64>,
    grads: &mut ParameterSet,
) {
    let n = ex.sentence.len();
    let reps = f.reps.as_ref().expect("grounded");
    let d_img = params.dims.d_img;
    // Difference array over token positions: each span spreads drep / width
    // across the tokens it covers.
    let mut diff = Array2::<f64>::zeros((n + 1, d_img));
    let mut dbias = Array1::<f64>::zeros(d_img);
    for ((i, j), p) in f.analysis.posteriors.spans() {
        let rep = reps.get(i, j);
        let mut drep = vec![0.0; d_img];
        for (v, &ds) in images.iter().zip(&dscore) {
            if ds == 0.0 {
                continue;
            }
            let (_, g) = cosine_and_grad(v, rep);
            for (d, gg) in drep.iter_mut().zip(g) {
                *d += ds * p * gg;
            }
        }
        let w = (j - i) as f64;
        for d in 0..d_img {
            dbias[d] += drep[d];
            diff[[i, d]] += drep[d] / w;
            diff[[j, d]] -= drep[d] / w;
        }
    }
    let mut dproj = Array2::<f64>::zeros((n, d_img));
    let mut running = Array1::<f64>::zeros(d_img);
    for k in 0..n {
        running += &diff.row(k);
        dproj.row_mut(k).assign(&running);
    }
    let x = word_rows(params, &ex.sentence);
    grads.grounding_projection.weight += &dproj.t().dot(&x);
    grads.grounding_projection.bias += &dbias;
    if !params.word_embeddings_frozen {
        let dx = dproj.dot(&params.grounding_projection.weight);
        for (k, &t) in ex.sentence.tokens.iter().enumerate() {
            let mut row = grads.word_embeddings.row_mut(t);
            row += &dx.row(k);
        }
    }
}
