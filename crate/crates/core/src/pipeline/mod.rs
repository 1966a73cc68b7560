//! Corpus ingestion, configuration, training and the drivers behind the CLI.

mod config;
mod corpus;
mod drivers;
mod parse;
mod synthetic;
mod train;

pub use config::{apply_override, Decoder, ExperimentConfig, GrammarConfig, ModelConfig, VocabConfig, OUTPUT_DIR_ENV};
pub use corpus::{
    filter_by_length, parse_predictions, parse_token_lines, parse_treebank, predictions_to_jsonl, read_corpus,
    read_plaintext, read_predictions, read_token_lines, read_treebank, normalize_label, Corpus, TokenCount,
    Treebank, TreebankEntry,
};
pub use parse::{align, decode_sentences, evaluate_corpus, evaluate_predictions, parse_corpus, predict, ParseOutput};
pub use train::{
    batch_log_tsv, derive_seed, epoch_order, loss_log_csv, run_train, train_with, BatchRecord, Checkpoint, EpochLog,
    TrainingInputs, TrainingSet, BATCH_LOG_FILE, CHECKPOINT_FILE, LOSS_LOG_FILE, VOCAB_FILE,
};
pub use synthetic::{constituent_images, labeled_tree, nonterminal_images, sample_treebank, SyntheticGrammar};
pub use drivers::{
    baseline_predictions, condition_seeds, run_analyze_errors, run_analyze_overlap, run_evaluate, run_significance,
    seed_experiment_protocol, Condition, EvaluationSummary, ProtocolRun, ScoreRow, ScoreTable,
};
