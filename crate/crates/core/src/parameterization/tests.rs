use super::*;
use crate::chart::inside;
use crate::grammar::{validate_grammar, ValidationMode};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_dims(d_z: usize) -> ModelDims {
    ModelDims {
        num_nonterminals: 2,
        num_preterminals: 3,
        vocab_size: 6,
        d_sym: 8,
        d_word: 8,
        d_z,
        d_img: 4,
    }
}

fn scaled_random(dims: ModelDims, seed: u64, scale: f64) -> ParameterSet {
    let mut p = ParameterSet::random(dims, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for (_, _, data) in p.tensors_mut() {
        for x in data.iter_mut() {
            *x = *x * scale + rng.random_range(-0.05..0.05);
        }
    }
    p
}

fn batch(with_images: bool) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    [vec![0, 3, 5, 1], vec![2, 2, 4, 0, 1]]
        .into_iter()
        .map(|toks| Example {
            sentence: Sentence::from_indices(toks).unwrap(),
            image: with_images.then(|| Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0))),
        })
        .collect()
}

fn config(alpha: f64, d_z: usize) -> TrainingConfig {
    TrainingConfig {
        alpha,
        d_z,
        ..TrainingConfig::default()
    }
}

/// Central differences of the total loss over every coordinate.
fn assert_gradients_match(params: &ParameterSet, batch: &[Example], cfg: &TrainingConfig, seed: u64) {
    let (_, grads) = loss_and_gradients(params, batch, cfg, seed).unwrap();
    let eps = 1e-5;
    let names: Vec<(String, usize)> = params.tensors().iter().map(|(n, _, d)| (n.clone(), d.len())).collect();
    let grad_values: Vec<Vec<f64>> = grads.tensors().iter().map(|(_, _, d)| d.to_vec()).collect();
    let mut checked = 0;
    for (t, (name, len)) in names.iter().enumerate() {
        for idx in 0..*len {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.tensors_mut()[t].2[idx] += delta;
                loss_and_gradients(&p, batch, cfg, seed).unwrap().0.total
            };
            let fd = if params.word_embeddings_frozen && name == "word_embeddings" {
                0.0
            } else {
                (eval(eps) - eval(-eps)) / (2.0 * eps)
            };
            let g = grad_values[t][idx];
            let tol = (1e-3 * fd.abs()).max(1e-5);
            assert!((g - fd).abs() <= tol, "{name}[{idx}]: analytic {g} vs numeric {fd}");
            checked += 1;
        }
    }
    assert_eq!(checked, params.num_values());
}

#[test]
fn zero_weights_give_uniform_rows() {
    let dims = tiny_dims(3);
    let params = ParameterSet::zeros(dims);
    let table = compute_rule_table(&params, Some(&Array1::zeros(3))).unwrap();
    let shape = dims.grammar_shape().unwrap();
    assert!(validate_grammar(&table, &shape, ValidationMode::Normalized).unwrap().passed);
    assert!(table.preterm_logp.iter().all(|&x| (x - (1.0f64 / 6.0).ln()).abs() < 1e-12));
    assert!(table.binary_logp.iter().all(|&x| (x - (1.0f64 / 25.0).ln()).abs() < 1e-12));
    assert!(table.start_logp.iter().all(|&x| (x - 0.5f64.ln()).abs() < 1e-12));
}

#[test]
fn random_parameters_give_normalized_table() {
    let dims = tiny_dims(0);
    let table = ParameterSet::random(dims, 3).unwrap().rule_table().unwrap();
    let shape = dims.grammar_shape().unwrap();
    assert!(validate_grammar(&table, &shape, ValidationMode::Normalized).unwrap().passed);
}

#[test]
fn latent_dimension_mismatch_is_structural() {
    let params = ParameterSet::zeros(tiny_dims(3));
    assert!(matches!(
        compute_rule_table(&params, Some(&Array1::zeros(2))),
        Err(Error::Structural(_))
    ));
}

#[test]
fn constant_row_shift_leaves_table_unchanged() {
    // Word space coordinate 0 is 1 for every word and maps to symbol
    // coordinate 0; moving a preterminal along it adds the same amount to
    // every score in its row.
    let dims = tiny_dims(0);
    let mut params = scaled_random(dims, 5, 1.0);
    params.word_embeddings.column_mut(0).fill(1.0);
    params.scorer_weights.word_proj.row_mut(0).fill(0.0);
    params.scorer_weights.word_proj[[0, 0]] = 1.0;
    params.scorer_weights.preterm.w1.column_mut(0).fill(0.0);
    let before = params.rule_table().unwrap();
    let row = 1 + dims.num_nonterminals + 1;
    params.symbol_embeddings[[row, 0]] += 2.5;
    let after = params.rule_table().unwrap();
    for (a, b) in before.preterm_logp.iter().zip(&after.preterm_logp) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(before.binary_logp, after.binary_logp);
}

#[test]
fn different_latents_give_different_preterminal_rows() {
    let params = scaled_random(tiny_dims(3), 8, 1.0);
    let a = compute_rule_table(&params, Some(&Array1::from(vec![1.0, 0.0, -1.0]))).unwrap();
    let b = compute_rule_table(&params, Some(&Array1::from(vec![-0.5, 2.0, 0.3]))).unwrap();
    let diff = a
        .preterm_logp
        .iter()
        .zip(&b.preterm_logp)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(diff > 1e-3);
}

#[test]
fn encoder_contracts() {
    let s = Sentence::from_indices(vec![0, 3, 5, 1]).unwrap();
    let zero = ParameterSet::zeros(tiny_dims(3));
    let (mu, lv) = encode_latent(&zero, &s).unwrap();
    assert!(mu.iter().chain(lv.iter()).all(|&x| x == 0.0));

    let params = scaled_random(tiny_dims(3), 2, 1.0);
    assert_eq!(encode_latent(&params, &s).unwrap(), encode_latent(&params, &s).unwrap());
    let permuted = Sentence::from_indices(vec![5, 1, 0, 3]).unwrap();
    let (mu_a, _) = encode_latent(&params, &s).unwrap();
    let (mu_b, _) = encode_latent(&params, &permuted).unwrap();
    // The mean-pooling encoder ignores order.
    for (a, b) in mu_a.iter().zip(&mu_b) {
        assert!((a - b).abs() < 1e-12);
    }
    let other = Sentence::from_indices(vec![2, 2, 4]).unwrap();
    assert_ne!(encode_latent(&params, &other).unwrap().0, mu_a);

    assert!(matches!(encode_latent(&ParameterSet::zeros(tiny_dims(0)), &s), Err(Error::Mode(_))));
}

#[test]
fn kl_closed_forms() {
    assert_eq!(kl_standard_normal(&Array1::zeros(4), &Array1::zeros(4)), 0.0);
    let kl = kl_standard_normal(&Array1::from(vec![1.0, 0.0]), &Array1::zeros(2));
    assert!((kl - 0.5).abs() < 1e-15);
}

#[test]
fn kl_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let mu: Array1<f64> = Array1::from_shape_fn(3, |_| rng.random_range(-2.0..2.0));
        let lv: Array1<f64> = Array1::from_shape_fn(3, |_| rng.random_range(-1.5..1.5));
        let mut numeric = 0.0;
        for k in 0..3 {
            let sd = (0.5 * lv[k]).exp();
            let log_q = |x: f64| -0.5 * ((x - mu[k]) / sd).powi(2) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
            let log_p = |x: f64| -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
            let (lo, hi, steps) = (mu[k] - 12.0 * sd, mu[k] + 12.0 * sd, 20_000);
            let h = (hi - lo) / steps as f64;
            let f = |x: f64| log_q(x).exp() * (log_q(x) - log_p(x));
            let mut acc = f(lo) + f(hi);
            for i in 1..steps {
                acc += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            numeric += acc * h / 3.0;
        }
        assert!((numeric - kl_standard_normal(&mu, &lv)).abs() < 1e-4);
        assert!(kl_standard_normal(&mu, &lv) >= 0.0);
    }
}

#[test]
fn plain_loss_is_mean_negative_log_marginal() {
    let params = scaled_random(tiny_dims(0), 1, 1.0);
    let b = batch(true);
    let (loss, _) = loss_and_gradients(&params, &b, &config(0.0, 0), 0).unwrap();
    let table = params.rule_table().unwrap();
    let expect = -b
        .iter()
        .map(|ex| inside(&table, &ex.sentence).unwrap().log_marginal)
        .sum::<f64>()
        / 2.0;
    assert!((loss.total - expect).abs() < 1e-12);
    assert_eq!(loss.kl_term, 0.0);
    assert_eq!(loss.grounding_loss, 0.0);
}

#[test]
fn text_only_batch_has_no_grounding_loss() {
    let params = scaled_random(tiny_dims(0), 1, 1.0);
    let (loss, _) = loss_and_gradients(&params, &batch(false), &config(3.0, 0), 0).unwrap();
    assert_eq!(loss.grounding_loss, 0.0);
    assert_eq!(loss.total, loss.lm_loss);
}

#[test]
fn gradients_match_finite_differences_without_latent() {
    let params = scaled_random(tiny_dims(0), 11, 1.5);
    assert_gradients_match(&params, &batch(true), &config(0.5, 0), 3);
}

#[test]
fn gradients_match_finite_differences_with_latent() {
    let params = scaled_random(tiny_dims(3), 12, 1.5);
    assert_gradients_match(&params, &batch(true), &config(0.5, 3), 7);
}

#[test]
fn gradients_match_finite_differences_with_frozen_words() {
    let mut params = scaled_random(tiny_dims(2), 13, 1.5);
    params.word_embeddings_frozen = true;
    let (_, grads) = loss_and_gradients(&params, &batch(true), &config(0.5, 2), 1).unwrap();
    assert!(grads.word_embeddings.iter().all(|&g| g == 0.0));
    assert_gradients_match(&params, &batch(true), &config(0.5, 2), 1);
}

#[test]
fn loss_is_bit_deterministic() {
    let params = scaled_random(tiny_dims(3), 6, 1.0);
    let cfg = config(0.5, 3);
    let (a, ga) = loss_and_gradients(&params, &batch(true), &cfg, 42).unwrap();
    let (b, gb) = loss_and_gradients(&params, &batch(true), &cfg, 42).unwrap();
    assert_eq!(a.total.to_bits(), b.total.to_bits());
    assert_eq!(ga.checksum(), gb.checksum());
    let (c, _) = loss_and_gradients(&params, &batch(true), &cfg, 43).unwrap();
    assert_ne!(a.total, c.total);
}

#[test]
fn loss_input_errors() {
    let params = scaled_random(tiny_dims(0), 1, 1.0);
    assert!(matches!(loss_and_gradients(&params, &[], &config(0.0, 0), 0), Err(Error::Contract(_))));
    assert!(matches!(
        loss_and_gradients(&params, &batch(false), &config(0.0, 4), 0),
        Err(Error::Config(_))
    ));
    let mut bad = batch(true);
    bad[0].image = Some(Array1::zeros(3));
    assert!(matches!(
        loss_and_gradients(&params, &bad, &config(1.0, 0), 0),
        Err(Error::Structural(_))
    ));
    // Images are ignored when grounding is off.
    assert!(loss_and_gradients(&params, &bad, &config(0.0, 0), 0).is_ok());
}

#[test]
fn adam_zero_gradient_only_advances_step() {
    let params = scaled_random(tiny_dims(2), 3, 1.0);
    let state = AdamState::new(&params);
    let (next, state2) = update_parameters(&params, &params.zeros_like(), &state, &config(0.0, 2)).unwrap();
    assert_eq!(next, params);
    assert_eq!(state2.step, 1);
}

#[test]
fn adam_never_touches_frozen_words() {
    let mut params = scaled_random(tiny_dims(0), 3, 1.0);
    params.word_embeddings_frozen = true;
    let initial = params.word_embeddings.clone();
    let mut grads = params.zeros_like();
    grads.word_embeddings.fill(1.0);
    grads.symbol_embeddings.fill(0.5);
    let mut state = AdamState::new(&params);
    for _ in 0..5 {
        state.apply(&mut params, &grads, 0.1).unwrap();
    }
    assert_eq!(
        params.word_embeddings.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        initial.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    assert!(params.symbol_embeddings.iter().any(|&x| x != 0.0));
}

#[test]
fn adam_matches_hand_recurrence() {
    let params = ParameterSet::zeros(tiny_dims(0));
    let mut p = params.clone();
    let mut state = AdamState::new(&p);
    let grads_seq = [0.5, -1.0, 0.25, 2.0, 0.0, -0.75];
    let lr = 0.01;
    let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.0f64);
    for (t, &g) in grads_seq.iter().enumerate() {
        let mut grads = p.zeros_like();
        grads.scorer_weights.start_bias[0] = g;
        state.apply(&mut p, &grads, lr).unwrap();
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let k = (t + 1) as i32;
        x -= lr * (m / (1.0 - 0.9f64.powi(k))) / ((v / (1.0 - 0.999f64.powi(k))).sqrt() + 1e-8);
        assert!((p.scorer_weights.start_bias[0] - x).abs() < 1e-12);
    }
}

#[test]
fn adam_rejects_mismatched_shapes() {
    let params = ParameterSet::zeros(tiny_dims(0));
    let other = ParameterSet::zeros(tiny_dims(2));
    let state = AdamState::new(&params);
    assert!(matches!(
        update_parameters(&params, &other, &state, &config(0.0, 0)),
        Err(Error::Structural(_))
    ));
}

#[test]
fn serialization_round_trips_bit_exactly() {
    let params = scaled_random(tiny_dims(3), 17, 1.0);
    let mut state = AdamState::new(&params);
    let (_, grads) = loss_and_gradients(&params, &batch(true), &config(0.5, 3), 0).unwrap();
    let mut p = params.clone();
    state.apply(&mut p, &grads, 1e-3).unwrap();
    let text = serde_json::to_string(&(&p, &state)).unwrap();
    let (p2, s2): (ParameterSet, AdamState) = serde_json::from_str(&text).unwrap();
    assert_eq!(p2.checksum(), p.checksum());
    assert_eq!(s2.m.checksum(), state.m.checksum());
    assert_eq!(s2.v.checksum(), state.v.checksum());
    assert_eq!(s2, state);
}

#[test]
fn training_reduces_loss_on_single_parse_corpus() {
    // Two words, every sentence "0 1": under |N|=1, |P|=2 the grammar can
    // become deterministic.
    let dims = ModelDims {
        num_nonterminals: 1,
        num_preterminals: 2,
        vocab_size: 2,
        d_sym: 8,
        d_word: 8,
        d_z: 0,
        d_img: 1,
    };
    let mut params = ParameterSet::random(dims, 0).unwrap();
    let data: Vec<Example> = (0..4)
        .map(|_| Example::text(Sentence::from_indices(vec![0, 1]).unwrap()))
        .collect();
    let cfg = TrainingConfig {
        learning_rate: 1e-2,
        ..config(0.0, 0)
    };
    let mut state = AdamState::new(&params);
    let first = loss_and_gradients(&params, &data, &cfg, 0).unwrap().0.lm_loss;
    let mut last = first;
    for step in 0..50 {
        let (loss, grads) = loss_and_gradients(&params, &data, &cfg, step).unwrap();
        last = loss.lm_loss;
        state.apply(&mut params, &grads, cfg.learning_rate).unwrap();
    }
    assert!(last < first - 0.1, "{first} -> {last}");
}
