//! End-to-end tests of the `protestseq` binary: corpus generation, training,
//! evaluation, prediction, checkpoint inspection, gradient verification, and
//! the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_protestseq"));
    cmd.env_remove("PROTESTSEQ_CONFIG");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth_corpus(dir: &Path) {
    let out = run(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--pos",
        "30",
        "--neg",
        "30",
        "--min-len",
        "4",
        "--max-len",
        "9",
        "--seed",
        "11",
    ]);
    assert_success(&out, "synth");
}

#[test]
fn synth_writes_all_corpus_files_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    synth_corpus(&a);
    synth_corpus(&b);
    for name in [
        "class_train.jsonl",
        "class_dev.jsonl",
        "tags_train.tsv",
        "tags_dev.tsv",
        "manifest.json",
    ] {
        let left = std::fs::read(a.join(name)).unwrap();
        let right = std::fs::read(b.join(name)).unwrap();
        assert!(!left.is_empty(), "{name} should not be empty");
        assert_eq!(left, right, "{name} should be identical across runs");
    }
}

#[test]
fn classifier_train_evaluate_predict_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    synth_corpus(&corpus);
    let model_dir = tmp.path().join("model");

    let out = run(&[
        "train",
        "--arch",
        "classifier",
        "--train",
        corpus.join("class_train.jsonl").to_str().unwrap(),
        "--dev",
        corpus.join("class_dev.jsonl").to_str().unwrap(),
        "--out",
        model_dir.to_str().unwrap(),
        "--epochs",
        "3",
        "--batches-per-task",
        "3",
        "--batch-size",
        "8",
        "--embedding-dim",
        "10",
        "--lr",
        "0.02",
    ]);
    assert_success(&out, "train");
    for name in ["model.pseq", "history.json", "dev_metrics.json"] {
        assert!(model_dir.join(name).exists(), "{name} should be written");
    }
    let history: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(model_dir.join("history.json")).unwrap())
            .unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 3);
    assert_eq!(history["config"]["epochs"], 3);

    let model = model_dir.join("model.pseq");
    let out = run(&[
        "evaluate",
        "--model",
        model.to_str().unwrap(),
        "--data",
        &format!("doc={}", corpus.join("class_dev.jsonl").display()),
    ]);
    assert_success(&out, "evaluate");
    let report: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    let acc = report["doc"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(report.get("sent").is_none(), "unrequested tasks stay absent");

    let out = run(&[
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--input",
        corpus.join("class_dev.jsonl").to_str().unwrap(),
    ]);
    assert_success(&out, "predict");
    let predictions = stdout_str(&out);
    let lines: Vec<&str> = predictions.lines().map(str::trim).collect();
    assert_eq!(lines.len(), 12, "one prediction per dev record");
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    for key in ["id", "p_doc", "label_doc", "p_sent", "label_sent"] {
        assert!(first.get(key).is_some(), "prediction rows carry {key}");
    }

    let out = run(&["inspect", "--model", model.to_str().unwrap()]);
    assert_success(&out, "inspect");
    let text = stdout_str(&out);
    assert!(text.contains("architecture: classifier"));
    assert!(text.contains("recurrent.fwd.w_input"));
}

#[test]
fn training_is_bitwise_reproducible_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    synth_corpus(&corpus);
    let train_once = |dir: &Path| {
        let out = run(&[
            "train",
            "--arch",
            "tagger",
            "--train",
            corpus.join("class_train.jsonl").to_str().unwrap(),
            "--train",
            &format!("role={}", corpus.join("tags_train.tsv").display()),
            "--out",
            dir.to_str().unwrap(),
            "--epochs",
            "2",
            "--batches-per-task",
            "2",
            "--batch-size",
            "8",
            "--embedding-dim",
            "10",
            "--role-hidden-units",
            "6",
        ]);
        assert_success(&out, "train");
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    train_once(&a);
    train_once(&b);
    assert_eq!(
        std::fs::read(a.join("model.pseq")).unwrap(),
        std::fs::read(b.join("model.pseq")).unwrap(),
        "same seed and data must give byte-identical checkpoints"
    );
    assert_eq!(
        std::fs::read(a.join("history.json")).unwrap(),
        std::fs::read(b.join("history.json")).unwrap()
    );
}

#[test]
fn tagger_round_trip_tags_every_token() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    synth_corpus(&corpus);
    let model_dir = tmp.path().join("model");
    let out = run(&[
        "train",
        "--arch",
        "tagger",
        "--train",
        corpus.join("class_train.jsonl").to_str().unwrap(),
        "--train",
        &format!("role={}", corpus.join("tags_train.tsv").display()),
        "--out",
        model_dir.to_str().unwrap(),
        "--epochs",
        "2",
        "--batches-per-task",
        "2",
        "--batch-size",
        "8",
        "--embedding-dim",
        "10",
        "--role-hidden-units",
        "6",
    ]);
    assert_success(&out, "train tagger");

    let model = model_dir.join("model.pseq");
    let out = run(&[
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--input",
        corpus.join("tags_dev.tsv").to_str().unwrap(),
    ]);
    assert_success(&out, "predict tags");
    let text = stdout_str(&out);
    let input = std::fs::read_to_string(corpus.join("tags_dev.tsv")).unwrap();
    let token_lines = |s: &str| s.lines().filter(|l| !l.trim().is_empty()).count();
    assert_eq!(token_lines(&text), token_lines(&input));
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut cols = line.split('\t');
        let _token = cols.next().unwrap();
        let tag = cols.next().expect("tag column present");
        assert!(tag == "O" || tag.starts_with("B-") || tag.starts_with("I-"));
        assert!(cols.next().is_none(), "predictions carry no entity column");
    }

    let out = run(&[
        "evaluate",
        "--model",
        model.to_str().unwrap(),
        "--data",
        &format!("role={}", corpus.join("tags_dev.tsv").display()),
    ]);
    assert_success(&out, "evaluate tags");
    let report: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert!(report["role"]["token_accuracy"].as_f64().unwrap() <= 1.0);
}

#[test]
fn usage_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    synth_corpus(&corpus);

    // Unknown architecture.
    let out = run(&[
        "train",
        "--arch",
        "transformer",
        "--train",
        "x.jsonl",
        "--out",
        tmp.path().join("o1").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Role data offered to the classifier.
    let out = run(&[
        "train",
        "--arch",
        "classifier",
        "--train",
        corpus.join("class_train.jsonl").to_str().unwrap(),
        "--train",
        &format!("role={}", corpus.join("tags_train.tsv").display()),
        "--out",
        tmp.path().join("o2").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("role"));

    // Tagger without role data.
    let out = run(&[
        "train",
        "--arch",
        "tagger",
        "--train",
        corpus.join("class_train.jsonl").to_str().unwrap(),
        "--out",
        tmp.path().join("o3").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Clap-level parse failure.
    let out = run(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));

    // Pointing at a file that does not exist is also a usage mistake.
    let out = run(&[
        "inspect",
        "--model",
        tmp.path().join("absent.pseq").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_data_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let bogus = tmp.path().join("bogus.pseq");
    std::fs::write(&bogus, b"not a checkpoint at all").unwrap();
    let out = run(&["inspect", "--model", bogus.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gradcheck_passes_and_corruption_is_caught() {
    let out = run(&["gradcheck", "--seed", "5"]);
    assert_success(&out, "gradcheck");
    let text = stdout_str(&out);
    let summaries: Vec<&str> = text.lines().filter(|l| l.starts_with("PASS")).collect();
    assert_eq!(summaries.len(), 5, "one summary line per checked component");
    assert!(
        text.contains("recurrent.fwd.w_input") && text.contains("role_out.b_candidate"),
        "every checked tensor is listed by name"
    );

    let out = run(&["gradcheck", "--seed", "5", "--corrupt-gradients"]);
    assert_eq!(out.status.code(), Some(1), "verification failures exit 1");
    let text = stdout_str(&out);
    assert!(text.lines().any(|l| l.starts_with("FAIL")));
    assert!(text.contains(" BAD"), "offending tensors are flagged");
}

#[test]
fn config_file_fills_defaults_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    synth_corpus(&corpus);
    let conf = tmp.path().join("run.conf");
    std::fs::write(
        &conf,
        "# shared settings\nepochs = 2\nbatches_per_task = 2\nbatch_size = 8\n\
         embedding_dim = 10\nignored_by_train = fine\n",
    )
    .unwrap();

    let model_dir = tmp.path().join("model");
    let out = bin()
        .env("PROTESTSEQ_CONFIG", &conf)
        .args([
            "train",
            "--arch",
            "classifier",
            "--train",
            corpus.join("class_train.jsonl").to_str().unwrap(),
            "--out",
            model_dir.to_str().unwrap(),
            "--epochs",
            "1",
        ])
        .output()
        .unwrap();
    assert_success(&out, "train with config");
    let history: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(model_dir.join("history.json")).unwrap())
            .unwrap();
    assert_eq!(history["config"]["epochs"], 1, "flag beats config file");
    assert_eq!(
        history["config"]["batch_size"], 8,
        "config beats built-in default"
    );
    assert_eq!(history["epochs"].as_array().unwrap().len(), 1);
}
