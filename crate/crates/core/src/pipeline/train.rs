//! Seeded training loop, checkpoints and training logs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::corpus::{read_corpus, read_text, write_text, Corpus};
use super::parse::evaluate_corpus;
use crate::error::{Error, Result};
use crate::grounding::{read_image_vectors, ImageVector};
use crate::lexicon::{build_vocabulary, initial_word_table, load_embeddings, EmbeddingSource, PretrainedEmbeddings, Vocabulary};
use crate::parameterization::{loss_and_gradients, AdamState, Example, ModelDims, ParameterSet};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const BATCH_LOG_FILE: &str = "batch_order.tsv";
pub const VOCAB_FILE: &str = "vocab.tsv";

const CHECKPOINT_VERSION: u32 = 1;

/// Mixes seed components into one 64-bit seed (splitmix64 steps).
pub fn derive_seed(parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(0x243F_6A88_85A3_08D3, |h, &p| mix(h ^ mix(p)))
}

/// Sentence order for one epoch; depends only on the data-order seed.
pub fn epoch_order(n: usize, data_seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[data_seed, epoch as u64]));
    order.shuffle(&mut rng);
    order
}

/// Per-epoch means over training sentences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lm_loss: f64,
    pub kl_term: f64,
    pub grounding_loss: f64,
    pub total: f64,
    pub dev_sentence_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub ids: Vec<String>,
}

pub fn loss_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,lm_loss,kl_term,grounding_loss,total,dev_sentence_f1\n");
    for e in log {
        let dev = e.dev_sentence_f1.map(|f| f.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch, e.lm_loss, e.kl_term, e.grounding_loss, e.total, dev
        ));
    }
    out
}

pub fn batch_log_tsv(log: &[BatchRecord]) -> String {
    let mut out = String::from("epoch\tbatch\tsentence_ids\n");
    for b in log {
        out.push_str(&format!("{}\t{}\t{}\n", b.epoch, b.batch, b.ids.join(",")));
    }
    out
}

/// Training sentences with their optional images, aligned by id.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub ids: Vec<String>,
    pub examples: Vec<Example>,
}

impl TrainingSet {
    /// Encodes the corpus and attaches images by sentence id. Sentences with
    /// fewer than two tokens cannot be trained on and are dropped.
    pub fn build(corpus: &Corpus, vocab: &Vocabulary, images: Option<&[ImageVector]>) -> Result<Self> {
        let by_id: HashMap<&str, &ImageVector> = images
            .unwrap_or_default()
            .iter()
            .map(|v| (v.id.as_str(), v))
            .collect();
        let mut ids = Vec::new();
        let mut examples = Vec::new();
        let mut short = 0usize;
        for (id, toks) in corpus.ids.iter().zip(&corpus.tokens) {
            if toks.len() < 2 {
                short += 1;
                continue;
            }
            let image = by_id.get(id.as_str()).map(|v| Array1::from(v.values.clone()));
            ids.push(id.clone());
            examples.push(Example {
                sentence: vocab.encode(toks)?,
                image,
            });
        }
        if short > 0 {
            log::warn!("dropped {short} training sentences shorter than 2 tokens");
        }
        if examples.is_empty() {
            return Err(Error::Empty("no training sentences with at least 2 tokens".into()));
        }
        Ok(Self { ids, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Complete training state; saving and loading it is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ExperimentConfig,
    pub vocab: Vocabulary,
    pub params: ParameterSet,
    pub optimizer: AdamState,
    pub embedding_sources: Vec<EmbeddingSource>,
    pub epochs_completed: usize,
    pub loss_log: Vec<EpochLog>,
    pub batch_log: Vec<BatchRecord>,
}

impl Checkpoint {
    /// Fresh model. `d_img` is the image dimension, 0 for text-only training.
    pub fn new(
        config: &ExperimentConfig,
        vocab: Vocabulary,
        pretrained: Option<&PretrainedEmbeddings>,
        d_img: usize,
    ) -> Result<Self> {
        config.validate()?;
        let dims = ModelDims {
            num_nonterminals: config.grammar.num_nonterminals,
            num_preterminals: config.grammar.num_preterminals,
            vocab_size: vocab.len(),
            d_sym: config.model.d_sym,
            d_word: config.model.d_word,
            d_z: config.training.d_z,
            d_img,
        };
        let seed = config.training.rng_seed;
        let table = initial_word_table(&vocab, pretrained, dims.d_word, derive_seed(&[seed, 1]))?;
        let params = ParameterSet::random(dims, seed)?.with_word_embeddings(table.matrix, config.freeze_embeddings)?;
        Ok(Self {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            vocab,
            optimizer: AdamState::new(&params),
            params,
            embedding_sources: table.sources,
            epochs_completed: 0,
            loss_log: Vec::new(),
            batch_log: Vec::new(),
        })
    }

    /// One pass over `data` in the seeded epoch order, then an optional dev
    /// evaluation.
    pub fn train_epoch(&mut self, data: &TrainingSet, dev: Option<&Corpus>) -> Result<EpochLog> {
        let epoch = self.epochs_completed;
        let training = self.config.training;
        let order = epoch_order(data.len(), self.config.data_seed, epoch);
        let (mut lm, mut kl, mut gl, mut total) = (0.0, 0.0, 0.0, 0.0);
        for (b, chunk) in order.chunks(training.batch_size).enumerate() {
            let batch: Vec<Example> = chunk.iter().map(|&k| data.examples[k].clone()).collect();
            let global = self.batch_log.len();
            let noise_seed = derive_seed(&[training.rng_seed, epoch as u64, b as u64]);
            let (loss, grads) = loss_and_gradients(&self.params, &batch, &training, noise_seed).map_err(|e| match e {
                Error::TrainingFault { message, .. } => Error::TrainingFault { batch: global, message },
                other => other,
            })?;
            self.optimizer.apply(&mut self.params, &grads, training.learning_rate)?;
            if !self.params.all_finite() {
                return Err(Error::TrainingFault {
                    batch: global,
                    message: "parameters became non-finite".into(),
                });
            }
            let w = chunk.len() as f64;
            lm += loss.lm_loss * w;
            kl += loss.kl_term * w;
            gl += loss.grounding_loss * w;
            total += loss.total * w;
            self.batch_log.push(BatchRecord {
                epoch,
                batch: b,
                ids: chunk.iter().map(|&k| data.ids[k].clone()).collect(),
            });
        }
        let n = data.len() as f64;
        let dev_sentence_f1 = match dev {
            Some(c) => Some(evaluate_corpus(&self.params, &self.vocab, c, self.config.decoder)?.0.sentence_f1),
            None => None,
        };
        let log = EpochLog {
            epoch,
            lm_loss: lm / n,
            kl_term: kl / n,
            grounding_loss: gl / n,
            total: total / n,
            dev_sentence_f1,
        };
        self.epochs_completed += 1;
        self.loss_log.push(log);
        Ok(log)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", ck.version)));
        }
        ck.params.check_congruent(&ck.optimizer.m)?;
        if ck.vocab.len() != ck.params.dims.vocab_size {
            return Err(Error::Structural("checkpoint vocabulary does not match its parameters".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }

    /// Writes the checkpoint, vocabulary and both logs into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        self.save(&dir.join(CHECKPOINT_FILE))?;
        write_text(&dir.join(VOCAB_FILE), &self.vocab.to_dump())?;
        write_text(&dir.join(LOSS_LOG_FILE), &loss_log_csv(&self.loss_log))?;
        write_text(&dir.join(BATCH_LOG_FILE), &batch_log_tsv(&self.batch_log))
    }
}

/// Inputs of a training run, already read from disk.
#[derive(Debug, Clone)]
pub struct TrainingInputs {
    pub train: Corpus,
    pub dev: Option<Corpus>,
    pub pretrained: Option<PretrainedEmbeddings>,
    pub images: Option<Vec<ImageVector>>,
}

impl TrainingInputs {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let path = config
            .train_corpus
            .as_ref()
            .ok_or_else(|| Error::Config("train_corpus is required for training".into()))?;
        if config.training.alpha > 0.0 && config.image_vectors.is_none() {
            return Err(Error::Config("alpha > 0 needs image_vectors".into()));
        }
        let mut train = read_corpus(path)?;
        if let Some(t) = config.max_length {
            train = train.filter_by_length(t);
        }
        let dev = config.dev_corpus.as_deref().map(read_corpus).transpose()?;
        let pretrained = config
            .embeddings
            .as_deref()
            .map(|p| load_embeddings(p, Some(config.model.d_word)))
            .transpose()?;
        let images = config.image_vectors.as_deref().map(read_image_vectors).transpose()?;
        Ok(Self {
            train,
            dev,
            pretrained,
            images,
        })
    }
}

/// Trains in memory, calling `after_epoch` with the state after every epoch.
pub fn train_with(
    config: &ExperimentConfig,
    inputs: &TrainingInputs,
    resume_from: Option<Checkpoint>,
    mut after_epoch: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<Checkpoint> {
    config.validate()?;
    if config.training.alpha > 0.0 && inputs.images.is_none() {
        return Err(Error::Config("alpha > 0 needs image vectors".into()));
    }
    if let Some(dev) = &inputs.dev {
        if dev.treebank.is_none() {
            return Err(Error::Config("dev_corpus must be a treebank with gold trees".into()));
        }
    }
    let mut ck = match resume_from {
        Some(mut ck) => {
            ck.config.training.max_epochs = config.training.max_epochs;
            ck
        }
        None => {
            let vocab = build_vocabulary(&inputs.train.tokens, config.vocab.size_cap, config.vocab.lowercase)?;
            let d_img = match &inputs.images {
                Some(v) => v.first().map_or(0, |x| x.values.len()),
                None => 0,
            };
            Checkpoint::new(config, vocab, inputs.pretrained.as_ref(), d_img)?
        }
    };
    let data = TrainingSet::build(&inputs.train, &ck.vocab, inputs.images.as_deref())?;
    while ck.epochs_completed < ck.config.training.max_epochs {
        let log = ck.train_epoch(&data, inputs.dev.as_ref())?;
        log::info!(
            "epoch {} total {:.4} lm {:.4} kl {:.4} grounding {:.4}{}",
            log.epoch,
            log.total,
            log.lm_loss,
            log.kl_term,
            log.grounding_loss,
            log.dev_sentence_f1.map(|f| format!(" dev S-F1 {f:.4}")).unwrap_or_default()
        );
        after_epoch(&ck)?;
    }
    Ok(ck)
}

/// Reads inputs, trains and writes outputs to `config.output_dir` after every
/// epoch. With `resume`, continues from the checkpoint in `checkpoint` or in
/// the output directory.
pub fn run_train(config: &ExperimentConfig) -> Result<Checkpoint> {
    let inputs = TrainingInputs::load(config)?;
    let out: PathBuf = config.output_dir.clone();
    let resume_path = config.checkpoint.clone().or_else(|| {
        let p = out.join(CHECKPOINT_FILE);
        p.exists().then_some(p)
    });
    let resume_from = match (config.resume, resume_path) {
        (true, Some(p)) => Some(Checkpoint::load(&p)?),
        _ => None,
    };
    let ck = train_with(config, &inputs, resume_from, |ck| ck.write_outputs(&out))?;
    ck.write_outputs(&out)?;
    Ok(ck)
}
