use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use pcfg_transfer::analysis::DEFAULT_BUCKET_WIDTH;
use pcfg_transfer::grounding::write_image_vectors;
use pcfg_transfer::lexicon::{build_vocabulary, load_embeddings, SelectionStrategy, Vocabulary};
use pcfg_transfer::pipeline::{
    constituent_images, nonterminal_images, parse_corpus, predictions_to_jsonl, read_corpus, read_predictions,
    read_token_lines, read_treebank, run_analyze_errors, run_analyze_overlap, run_evaluate, run_significance,
    run_train, sample_treebank, seed_experiment_protocol, Checkpoint, Condition, Decoder, ExperimentConfig,
    ScoreTable, SyntheticGrammar, TrainingInputs, OUTPUT_DIR_ENV,
};
use pcfg_transfer::{Error, Result};

#[derive(Parser)]
#[command(name = "pcfg-transfer", version, about = "Grammar induction, zero-shot parsing and evaluation")]
struct Cli {
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted config override, e.g. `training.alpha=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary from a corpus and dump it as word, index, count.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train a model from the config.
    Train,
    /// Parse a corpus with a trained checkpoint.
    Parse(ParseArgs),
    /// Score predictions against gold trees, with branching and PERM baselines.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Vocabulary dump used to count unknown words per sentence.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        perm_seed: u64,
    },
    /// Type- and instance-level factor overlap between two treebanks.
    AnalyzeOverlap {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Map words outside this vocabulary dump to `<unk>` first.
        #[arg(long)]
        unk_vocab: Option<PathBuf>,
    },
    /// Recognized/unrecognized ratios bucketed by length and unknown words.
    AnalyzeErrors {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BUCKET_WIDTH)]
        bucket_width: usize,
    },
    /// Paired t-test between two conditions of a score table.
    SignificanceTest(SignificanceArgs),
    /// Sample a synthetic treebank, token file and image vectors.
    SampleCorpus(SampleArgs),
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "standard")]
    strategy: SelectionStrategy,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, value_enum)]
    decoder: Option<DecoderArg>,
}

#[derive(Args)]
struct SignificanceArgs {
    /// Score table CSV with columns condition,seed,sentence_f1.
    #[arg(long, required_unless_present = "run_protocol")]
    scores: Option<PathBuf>,
    /// Train the seed protocol from the config instead of reading scores.
    #[arg(long)]
    run_protocol: bool,
    #[arg(long, value_delimiter = ',', default_value = "V-RM,RM")]
    conditions: Vec<Condition>,
    #[arg(long, default_value_t = 5)]
    num_seeds: usize,
    #[arg(long, default_value = "V-RM")]
    a: String,
    #[arg(long, default_value = "RM")]
    b: String,
    #[arg(long, default_value_t = 0.1)]
    level: f64,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, default_value_t = 3)]
    nonterminals: usize,
    #[arg(long, default_value_t = 4)]
    preterminals: usize,
    #[arg(long, default_value_t = 5)]
    words_per_preterminal: usize,
    #[arg(long, default_value_t = 3)]
    rules_per_nonterminal: usize,
    #[arg(long, default_value_t = 0)]
    grammar_seed: u64,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 2)]
    min_length: usize,
    #[arg(long, default_value_t = 15)]
    max_length: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "nonterminal")]
    images: ImageKind,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// File stem for the outputs.
    #[arg(long, default_value = "synthetic")]
    name: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecoderArg {
    Mbr,
    Viterbi,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImageKind {
    None,
    Nonterminal,
    Constituent,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Vocabulary::from_dump(&text, &path.display().to_string())
}

fn run(cli: Cli) -> Result<()> {
    let config = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let out = config.output_dir.clone();
    info!("output directory {} (override with {OUTPUT_DIR_ENV})", out.display());
    match cli.command {
        Command::BuildVocab { corpus } => {
            let tokens = match read_corpus(&corpus) {
                Ok(c) => c.tokens,
                Err(Error::Empty(_)) => read_token_lines(&corpus)?.0,
                Err(e) => return Err(e),
            };
            let vocab = build_vocabulary(&tokens, config.vocab.size_cap, config.vocab.lowercase)?;
            write(&out.join("vocab.tsv"), &vocab.to_dump())?;
            println!("{} types", vocab.len());
        }
        Command::Train => {
            let ck = run_train(&config)?;
            if let Some(last) = ck.loss_log.last() {
                println!("{}", serde_json::to_string(last)?);
            }
        }
        Command::Parse(args) => {
            let ck = Checkpoint::load(&args.checkpoint)?;
            let corpus = read_corpus(&args.corpus)?;
            let pretrained = args
                .embeddings
                .as_deref()
                .map(|p| load_embeddings(p, Some(ck.params.dims.d_word)))
                .transpose()?;
            let decoder = match args.decoder {
                Some(DecoderArg::Mbr) => Decoder::Mbr,
                Some(DecoderArg::Viterbi) => Decoder::Viterbi,
                None => config.decoder,
            };
            let result = parse_corpus(&ck, &corpus, args.strategy, pretrained.as_ref(), decoder)?;
            write(&out.join("predictions.jsonl"), &predictions_to_jsonl(&result.predictions)?)?;
            write_json(&out.join("selection.json"), &result.selection)?;
            println!(
                "{} sentences; type unknown {:.4}, token unknown {:.4}",
                result.predictions.len(),
                result.selection.type_unknown_rate,
                result.selection.token_unknown_rate
            );
        }
        Command::Evaluate {
            predictions,
            gold,
            vocab,
            perm_seed,
        } => {
            let preds = read_predictions(&predictions)?;
            let gold = read_treebank(&gold)?;
            let vocab = vocab.as_deref().map(read_vocab).transpose()?;
            let (summary, records) = run_evaluate(&preds, &gold, vocab.as_ref(), perm_seed)?;
            write_json(&out.join("metrics.json"), &summary)?;
            write(&out.join("per_length.csv"), &summary.model.per_length_csv())?;
            let mut lines = String::new();
            for r in &records {
                lines.push_str(&serde_json::to_string(r)?);
                lines.push('\n');
            }
            write(&out.join("records.jsonl"), &lines)?;
            println!("system,corpus_f1,sentence_f1");
            for (name, m) in [
                ("model", &summary.model),
                ("left", &summary.left_branching),
                ("right", &summary.right_branching),
                ("perm", &summary.perm),
            ] {
                println!("{name},{:.4},{:.4}", m.corpus_f1, m.sentence_f1);
            }
        }
        Command::AnalyzeOverlap { train, test, unk_vocab } => {
            let vocab = unk_vocab.as_deref().map(read_vocab).transpose()?;
            let report = run_analyze_overlap(&read_treebank(&train)?, &read_treebank(&test)?, vocab.as_ref())?;
            let csv = report.to_csv();
            write(&out.join("overlap.csv"), &csv)?;
            print!("{csv}");
        }
        Command::AnalyzeErrors {
            predictions,
            gold,
            vocab,
            bucket_width,
        } => {
            let vocab = read_vocab(&vocab)?;
            let table = run_analyze_errors(&read_predictions(&predictions)?, &read_treebank(&gold)?, Some(&vocab), bucket_width)?;
            let csv = table.to_csv();
            write(&out.join("error_buckets.csv"), &csv)?;
            print!("{csv}");
        }
        Command::SignificanceTest(args) => {
            let table = if args.run_protocol {
                let inputs = TrainingInputs::load(&config)?;
                let (table, _) = seed_experiment_protocol(&config, &inputs, &args.conditions, args.num_seeds)?;
                write(&out.join("scores.csv"), &table.to_csv())?;
                table
            } else {
                let path = args.scores.as_deref().expect("clap requires --scores");
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                ScoreTable::from_csv(&text, &path.display().to_string())?
            };
            let test = run_significance(&table, &args.a, &args.b)?;
            write_json(&out.join("significance.json"), &test)?;
            println!(
                "{} vs {}: mean diff {:.4}, t {:.4}, p {:.4}, n {}, {} at {}",
                args.a,
                args.b,
                test.mean_diff,
                test.t_stat,
                test.p_value,
                test.n,
                if test.rejects_at(args.level) { "rejects" } else { "does not reject" },
                args.level
            );
        }
        Command::SampleCorpus(args) => {
            let grammar = SyntheticGrammar {
                num_nonterminals: args.nonterminals,
                num_preterminals: args.preterminals,
                words_per_preterminal: args.words_per_preterminal,
                rules_per_nonterminal: args.rules_per_nonterminal,
                seed: args.grammar_seed,
            };
            let (tb, trees) = sample_treebank(&grammar, args.count, args.min_length, args.max_length, args.seed)?;
            write(&out.join(format!("{}.mrg", args.name)), &tb.to_text())?;
            let plain: String = tb.entries.iter().map(|e| e.tokens.join(" ") + "\n").collect();
            write(&out.join(format!("{}.txt", args.name)), &plain)?;
            let image_seed = args.seed.wrapping_add(1);
            let images = match args.images {
                ImageKind::None => None,
                ImageKind::Nonterminal => Some(nonterminal_images(&trees, args.nonterminals, args.noise, image_seed)?),
                ImageKind::Constituent => {
                    let words = grammar.words();
                    let idx: Vec<Vec<usize>> = tb
                        .entries
                        .iter()
                        .map(|e| e.tokens.iter().map(|t| words.iter().position(|w| w == t).unwrap_or(0)).collect())
                        .collect();
                    Some(constituent_images(&trees, &idx, words.len(), args.noise, image_seed)?)
                }
            };
            if let Some(images) = images {
                write(&out.join(format!("{}.images.tsv", args.name)), &write_image_vectors(&images))?;
            }
            println!("{} sentences", tb.len());
        }
    }
    Ok(())
}
