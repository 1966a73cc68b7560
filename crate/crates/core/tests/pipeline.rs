use std::path::Path;
use std::process::Command;

use pcfg_transfer::pipeline::{
    nonterminal_images, sample_treebank, train_with, Checkpoint, Corpus, ExperimentConfig, SyntheticGrammar,
    TrainingInputs, OUTPUT_DIR_ENV,
};

fn small_setup(with_images: bool) -> (ExperimentConfig, TrainingInputs) {
    let grammar = SyntheticGrammar::default();
    let (train, trees) = sample_treebank(&grammar, 120, 3, 9, 11).unwrap();
    let (dev, _) = sample_treebank(&grammar, 20, 3, 9, 12).unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.grammar.num_nonterminals = 3;
    cfg.grammar.num_preterminals = 4;
    cfg.model.d_sym = 8;
    cfg.model.d_word = 8;
    cfg.training.d_z = 3;
    cfg.training.batch_size = 8;
    cfg.training.learning_rate = 0.01;
    cfg.training.alpha = if with_images { 0.5 } else { 0.0 };
    let images = with_images.then(|| nonterminal_images(&trees, 3, 0.1, 0).unwrap());
    let inputs = TrainingInputs {
        train: Corpus::from_treebank(train),
        dev: Some(Corpus::from_treebank(dev)),
        pretrained: None,
        images,
    };
    (cfg, inputs)
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let (mut cfg, inputs) = small_setup(true);
    cfg.training.max_epochs = 4;
    let straight = train_with(&cfg, &inputs, None, |_| Ok(())).unwrap();

    cfg.training.max_epochs = 2;
    let half = train_with(&cfg, &inputs, None, |_| Ok(())).unwrap();
    let reloaded = Checkpoint::from_json(&half.to_json().unwrap()).unwrap();
    cfg.training.max_epochs = 4;
    let resumed = train_with(&cfg, &inputs, Some(reloaded), |_| Ok(())).unwrap();

    assert_eq!(resumed.loss_log, straight.loss_log);
    assert_eq!(resumed.batch_log, straight.batch_log);
    assert_eq!(resumed.params, straight.params);
    assert_eq!(resumed.to_json().unwrap(), straight.to_json().unwrap());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (mut cfg, inputs) = small_setup(false);
    cfg.training.max_epochs = 1;
    let ck = train_with(&cfg, &inputs, None, |_| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.params.checksum(), ck.params.checksum());
    for ((_, _, a), (_, _, b)) in back.params.tensors().iter().zip(ck.params.tensors().iter()) {
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(back.to_json().unwrap(), ck.to_json().unwrap());
    assert_eq!(back.vocab, ck.vocab);
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let (mut cfg, inputs) = small_setup(false);
    cfg.training.max_epochs = 1;
    let ck = train_with(&cfg, &inputs, None, |_| Ok(())).unwrap();
    let json = ck.to_json().unwrap();
    assert!(Checkpoint::from_json(&json[..json.len() / 2]).is_err());
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pcfg-transfer"));
    c.env("RUST_LOG", "error");
    c
}

fn code(c: &mut Command) -> i32 {
    c.output().unwrap().status.code().unwrap()
}

fn sample(out: &Path) {
    let status = bin()
        .env(OUTPUT_DIR_ENV, out)
        .args(["sample-corpus", "--count", "40", "--min-length", "3", "--max-length", "8", "--name", "toy"])
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    sample(&out);
    for f in ["toy.mrg", "toy.txt", "toy.images.tsv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let toy = out.join("toy.mrg");

    assert_eq!(code(bin().env(OUTPUT_DIR_ENV, &out).args(["build-vocab", "--corpus"]).arg(&toy)), 0);
    assert!(std::fs::read_to_string(out.join("vocab.tsv")).unwrap().contains("<unk>\t"));

    // Usage and configuration problems exit with 2.
    assert_eq!(code(bin().arg("no-such-command")), 2);
    assert_eq!(code(bin().args(["--config", "/nonexistent/cfg.json", "train"])), 2);
    assert_eq!(code(bin().args(["--set", "bogus=1", "train"])), 2);
    assert_eq!(code(bin().args(["--set", "training.alpha=1"]).arg("--set").arg(format!("train_corpus={}", toy.display())).arg("train")), 2);

    // Data problems exit with 1.
    let bad = dir.path().join("bad.mrg");
    std::fs::write(&bad, "(S (A a) (B b)\n").unwrap();
    assert_eq!(code(bin().env(OUTPUT_DIR_ENV, &out).args(["analyze-overlap", "--train"]).arg(&bad).arg("--test").arg(&toy)), 1);
    let scores = dir.path().join("scores.csv");
    std::fs::write(&scores, "condition,seed,sentence_f1\nA,0,0.5\nA,1,0.6\nB,0,0.4\nB,2,0.3\n").unwrap();
    assert_eq!(code(bin().env(OUTPUT_DIR_ENV, &out).args(["significance-test", "--a", "A", "--b", "B", "--scores"]).arg(&scores)), 1);
}

#[test]
fn cli_train_parse_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    sample(&out);
    let toy = out.join("toy.mrg");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "train_corpus": toy,
            "dev_corpus": toy,
            "grammar": {"num_nonterminals": 3, "num_preterminals": 4},
            "model": {"d_sym": 8, "d_word": 8},
            "training": {"d_z": 0, "max_epochs": 2, "batch_size": 8}
        })
        .to_string(),
    )
    .unwrap();
    let run = |args: &[&str]| {
        let o = bin().env(OUTPUT_DIR_ENV, &out).arg("--config").arg(&cfg).args(args).output().unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["--set", "training.learning_rate=0.005", "train"]);
    let log = std::fs::read_to_string(out.join("loss_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch,lm_loss,kl_term,grounding_loss,total,dev_sentence_f1"));
    let ck = out.join("checkpoint.json").display().to_string();
    let txt = out.join("toy.txt").display().to_string();
    run(&["parse", "--checkpoint", &ck, "--corpus", &txt, "--strategy", "direct"]);
    let preds = std::fs::read_to_string(out.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 40);
    let first: serde_json::Value = serde_json::from_str(preds.lines().next().unwrap()).unwrap();
    for key in ["id", "tokens", "spans", "logp"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    let p = out.join("predictions.jsonl").display().to_string();
    let g = toy.display().to_string();
    run(&["evaluate", "--predictions", &p, "--gold", &g]);
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["model"]["sentence_f1"].as_f64().unwrap() > 0.0);
    let v = out.join("vocab.tsv").display().to_string();
    run(&["analyze-errors", "--predictions", &p, "--gold", &g, "--vocab", &v]);
    assert!(std::fs::read_to_string(out.join("error_buckets.csv")).unwrap().starts_with("length_min,"));
}
