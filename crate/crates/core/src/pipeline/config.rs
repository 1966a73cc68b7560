//! Experiment configuration: a JSON document with dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::corpus::read_text;
use crate::error::{Error, Result};
use crate::lexicon::{SelectionStrategy, DEFAULT_SIZE_CAP};
use crate::parameterization::TrainingConfig;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "PCFG_TRANSFER_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    #[default]
    Mbr,
    Viterbi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrammarConfig {
    pub num_nonterminals: usize,
    pub num_preterminals: usize,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        Self {
            num_nonterminals: 10,
            num_preterminals: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_sym: usize,
    pub d_word: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d_sym: 64, d_word: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub size_cap: usize,
    pub lowercase: bool,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            size_cap: DEFAULT_SIZE_CAP,
            lowercase: false,
        }
    }
}

/// Every knob of an experiment. Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train_corpus: Option<PathBuf>,
    pub dev_corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub freeze_embeddings: bool,
    pub image_vectors: Option<PathBuf>,
    /// Checkpoint to resume from or to parse with.
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub grammar: GrammarConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub vocab: VocabConfig,
    pub strategy: SelectionStrategy,
    pub decoder: Decoder,
    /// Seed for the per-epoch shuffle; `training.rng_seed` is the model seed.
    pub data_seed: u64,
    /// Training sentences must have fewer tokens than this.
    pub max_length: Option<f64>,
    /// Continue from `output_dir/checkpoint.json` when it exists.
    pub resume: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train_corpus: None,
            dev_corpus: None,
            embeddings: None,
            freeze_embeddings: false,
            image_vectors: None,
            checkpoint: None,
            output_dir: PathBuf::from("out"),
            grammar: GrammarConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            vocab: VocabConfig::default(),
            strategy: SelectionStrategy::Random,
            decoder: Decoder::Mbr,
            data_seed: 0,
            max_length: None,
            resume: false,
        }
    }
}

fn config_err(e: serde_json::Error) -> Error {
    Error::Config(e.to_string())
}

/// Parses the right-hand side of `--set`: JSON when it parses, a string otherwise.
fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` to a JSON object, creating intermediate objects.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut node = doc;
    for p in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?} descends into a non-object")))?;
        node = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override {key:?} descends into a non-object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), override_value(raw));
    Ok(())
}

impl ExperimentConfig {
    /// Builds a config from optional JSON text plus overrides, then validates it.
    pub fn from_json_with_overrides(json: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut doc = match json {
            Some(text) => serde_json::from_str(text).map_err(config_err)?,
            None => Value::Object(Default::default()),
        };
        if !doc.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        if let Some(p) = path {
            if !p.is_file() {
                return Err(Error::Config(format!("config file {} does not exist", p.display())));
            }
        }
        let text = path.map(read_text).transpose()?;
        let mut cfg = Self::from_json_with_overrides(text.as_deref(), overrides)?;
        cfg.apply_env();
        cfg.check_paths()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if let Some(t) = self.max_length {
            if !(t > 0.0) {
                return Err(Error::Config(format!("max_length must be positive, got {t}")));
            }
        }
        if self.grammar.num_nonterminals == 0 || self.grammar.num_preterminals == 0 {
            return Err(Error::Config("grammar needs at least one nonterminal and one preterminal".into()));
        }
        if self.model.d_sym == 0 || self.model.d_word == 0 {
            return Err(Error::Config("d_sym and d_word must be positive".into()));
        }
        if self.vocab.size_cap == 0 {
            return Err(Error::Config("vocab.size_cap must be positive".into()));
        }
        Ok(())
    }

    /// Every referenced input file must exist.
    pub fn check_paths(&self) -> Result<()> {
        let inputs = [
            ("train_corpus", &self.train_corpus),
            ("dev_corpus", &self.dev_corpus),
            ("embeddings", &self.embeddings),
            ("image_vectors", &self.image_vectors),
            ("checkpoint", &self.checkpoint),
        ];
        for (name, p) in inputs {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Config(format!("{name} {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = ExperimentConfig::from_json_with_overrides(
            Some(r#"{"training": {"alpha": 0.5}, "strategy": "unknown"}"#),
            &[
                "training.d_z=4".into(),
                "grammar.num_nonterminals=3".into(),
                "output_dir=runs/a".into(),
                "max_length=10.5".into(),
                "decoder=viterbi".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.training.alpha, 0.5);
        assert_eq!(cfg.training.d_z, 4);
        assert_eq!(cfg.training.batch_size, TrainingConfig::default().batch_size);
        assert_eq!(cfg.grammar.num_nonterminals, 3);
        assert_eq!(cfg.output_dir, PathBuf::from("runs/a"));
        assert_eq!(cfg.max_length, Some(10.5));
        assert_eq!(cfg.strategy, SelectionStrategy::Unknown);
        assert_eq!(cfg.decoder, Decoder::Viterbi);
    }

    #[test]
    fn config_errors() {
        let bad = |json: Option<&str>, o: &[&str]| {
            let o: Vec<String> = o.iter().map(|s| s.to_string()).collect();
            matches!(ExperimentConfig::from_json_with_overrides(json, &o), Err(Error::Config(_)))
        };
        assert!(bad(Some(r#"{"no_such_field": 1}"#), &[]));
        assert!(bad(None, &["strategy=nearest"]));
        assert!(bad(None, &["training.alpha=-1"]));
        assert!(bad(None, &["max_length=0"]));
        assert!(bad(None, &["noequals"]));
        assert!(bad(Some("[1]"), &[]));
        assert!(bad(None, &["training.alpha.x=1"]));
    }

    #[test]
    fn json_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json_with_overrides(Some(&cfg.to_json().unwrap()), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_paths_are_config_errors() {
        let cfg = ExperimentConfig {
            train_corpus: Some("/nonexistent/train.txt".into()),
            ..Default::default()
        };
        assert!(matches!(cfg.check_paths(), Err(Error::Config(_))));
    }
}
