use std::path::{Path, PathBuf};
use std::process::Command;

use gridptr::data::{load_dataset, read_feature_file, write_feature_file};
use gridptr::metrics::{read_predictions, write_predictions, PredictionRecord};
use gridptr::model::PointerModel;
use gridptr_cli::viz::read_pgm;
use gridptr_cli::{run, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};

fn gridptr(args: &[&str]) -> i32 {
    let mut full = vec!["gridptr", "--quiet"];
    full.extend_from_slice(args);
    run(full)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic corpus in `dir/synth`.
fn synth(dir: &Path, count: usize, extra: Option<&str>) -> PathBuf {
    let out = dir.join("synth");
    let count = count.to_string();
    let mut args = vec!["--seed", "42", "synth", "--count", &count, "--out", s(&out)];
    if let Some(e) = extra {
        args.extend(["--extra-grids", e]);
    }
    assert_eq!(gridptr(&args), EXIT_OK);
    out
}

fn train(dir: &Path, corpus: &Path, name: &str, epochs: &str) -> PathBuf {
    let out = dir.join(name);
    let code = gridptr(&[
        "--seed",
        "3",
        "train",
        "--dataset",
        s(&corpus.join("dataset.json")),
        "--features",
        s(&corpus.join("features.bin")),
        "--epochs",
        epochs,
        "--out",
        s(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    out
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_dataset_is_a_usage_error_naming_the_path() {
    let out = Command::new(env!("CARGO_BIN_EXE_gridptr"))
        .args(["train", "--dataset", "/nonexistent/train.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/train.json"));
}

#[test]
fn bad_flags_and_configs_are_usage_errors() {
    assert_eq!(gridptr(&["--stack", "dual", "analyze"]), EXIT_USAGE);
    assert_eq!(gridptr(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(gridptr(&["--ensemble-tau", "1.5", "analyze"]), EXIT_USAGE);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "grid = 3\n").unwrap();
    assert_eq!(gridptr(&["--config", s(&cfg), "analyze"]), EXIT_USAGE);
    assert_eq!(gridptr(&["--config", s(&dir.path().join("absent.toml")), "analyze"]), EXIT_USAGE);
}

#[test]
fn quiet_suppresses_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_gridptr");
    let out = dir.path().join("s");
    let quiet = Command::new(bin)
        .args(["--quiet", "synth", "--count", "2", "--out", s(&out)])
        .output()
        .unwrap();
    assert!(quiet.status.success());
    assert!(quiet.stdout.is_empty());
    let loud = Command::new(bin).args(["synth", "--count", "2", "--out", s(&out)]).output().unwrap();
    assert!(String::from_utf8_lossy(&loud.stdout).contains("wrote 2 examples"));
}

#[test]
fn synth_is_deterministic_and_fully_answerable() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(&dir.path().join("a"), 20, Some("38"));
    let b = synth(&dir.path().join("b"), 20, Some("38"));
    for f in ["dataset.json", "features.bin"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let examples = load_dataset(&a.join("dataset.json")).unwrap();
    assert_eq!(examples.len(), 20);
    assert_eq!(read_feature_file(&a.join("features.bin")).unwrap().len(), 40);

    let analysis = dir.path().join("analysis.json");
    assert_eq!(gridptr(&["analyze", "--dataset", s(&a.join("dataset.json")), "--out", s(&analysis)]), EXIT_OK);
    let r = report(&analysis);
    assert_eq!(r["recall"], 100.0);
    assert_eq!(r["anls_upper_bound"], 1.0);
    assert_eq!(r["trainable"], 20);
}

#[test]
fn train_predict_eval_viz_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), 12, None);
    let run_dir = train(dir.path(), &corpus, "run", "2");
    for f in ["final.ckpt", "best.ckpt", "train_log.jsonl", "config.toml", "train_summary.json"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let model = PointerModel::<f32>::load(&run_dir.join("final.ckpt")).unwrap();
    assert_eq!(model.config, gridptr::model::ModelConfig::default());
    assert_eq!(std::fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap().lines().count(), 2);

    let dataset = corpus.join("dataset.json");
    let features = corpus.join("features.bin");
    let ckpt = run_dir.join("final.ckpt");
    let preds = dir.path().join("preds.jsonl");
    let code = gridptr(&[
        "predict", "--dataset", s(&dataset), "--features", s(&features), "--checkpoint", s(&ckpt), "--out", s(&preds),
    ]);
    assert_eq!(code, EXIT_OK);
    let records = read_predictions(&preds).unwrap();
    assert_eq!(records.len(), 12);
    assert!(records.iter().all(|r| r.confidence > 0.0 && r.confidence < 1.0));

    let rep = dir.path().join("report.json");
    let code = gridptr(&[
        "eval", "--dataset", s(&dataset), "--features", s(&features), "--checkpoint", s(&ckpt), "--out", s(&rep),
    ]);
    assert_eq!(code, EXIT_OK);
    let r = report(&rep);
    assert_eq!(r["count"], 12);
    assert!(r["subsets"]["answer_in_ocr"]["count"] == 12);
    let anls = r["anls"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&anls));

    // The config written next to the checkpoint reproduces the run.
    let again = dir.path().join("again");
    let code = gridptr(&[
        "--config",
        s(&run_dir.join("config.toml")),
        "train",
        "--dataset",
        s(&dataset),
        "--features",
        s(&features),
        "--out",
        s(&again),
    ]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(std::fs::read(again.join("final.ckpt")).unwrap(), std::fs::read(&ckpt).unwrap());

    let img = dir.path().join("map.pgm");
    let code = gridptr(&[
        "viz",
        "--dataset",
        s(&dataset),
        "--features",
        s(&features),
        "--checkpoint",
        s(&ckpt),
        "--question-id",
        "synth-0003",
        "--out",
        s(&img),
        "--ascii",
    ]);
    assert_eq!(code, EXIT_OK);
    for path in [img.clone(), img.with_extension("ascii.pgm")] {
        let g = read_pgm(&std::fs::read(path).unwrap()).unwrap();
        assert_eq!((g.width, g.height), (19 * 16, 19 * 16));
    }
    let code = gridptr(&[
        "viz", "--dataset", s(&dataset), "--features", s(&features), "--checkpoint", s(&ckpt), "--question-id", "nope",
        "--out", s(&img),
    ]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), 8, None);
    let a = train(dir.path(), &corpus, "a", "2");
    let b = train(dir.path(), &corpus, "b", "2");
    for f in ["final.ckpt", "best.ckpt", "train_log.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn incompatible_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), 4, None);
    let bogus = dir.path().join("bogus.ckpt");
    std::fs::write(&bogus, b"GPTR1").unwrap();
    let code = gridptr(&[
        "predict",
        "--dataset",
        s(&corpus.join("dataset.json")),
        "--checkpoint",
        s(&bogus),
        "--out",
        s(&dir.path().join("p.jsonl")),
    ]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn non_finite_features_abort_with_numeric_exit() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), 4, None);
    let mut records = read_feature_file(&corpus.join("features.bin")).unwrap();
    records[0].1.data_mut()[0] = f32::NAN;
    write_feature_file(&corpus.join("features.bin"), &records).unwrap();
    let code = gridptr(&[
        "train",
        "--dataset",
        s(&corpus.join("dataset.json")),
        "--features",
        s(&corpus.join("features.bin")),
        "--epochs",
        "1",
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(code, EXIT_NUMERIC);
}

fn write_preds(path: &Path, rows: &[(&str, &str, f64)]) {
    let recs: Vec<PredictionRecord> = rows
        .iter()
        .map(|(q, a, c)| PredictionRecord {
            question_id: q.to_string(),
            answer: a.to_string(),
            confidence: *c,
        })
        .collect();
    write_predictions(path, &recs).unwrap();
}

#[test]
fn eval_scores_prediction_files_and_ensembles() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), 6, None);
    let dataset = corpus.join("dataset.json");
    let examples = load_dataset(&dataset).unwrap();

    let oracle = dir.path().join("oracle.jsonl");
    let rows: Vec<(&str, &str, f64)> =
        examples.iter().map(|e| (e.question_id.as_str(), e.answers[0].as_str(), 0.9)).collect();
    write_preds(&oracle, &rows);
    let rep = dir.path().join("r.json");
    let eval = |preds: &Path, extra: &[&str]| {
        let mut args = extra.to_vec();
        args.extend(["eval", "--dataset", s(&dataset), "--predictions", s(preds), "--out", s(&rep)]);
        assert_eq!(gridptr(&args), EXIT_OK);
        report(&rep)
    };
    let r = eval(&oracle, &[]);
    assert_eq!((r["anls"].as_f64(), r["accuracy"].as_f64()), (Some(1.0), Some(100.0)));

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(eval(&empty, &[])["anls"], 0.0);

    // Classifier answers are wrong on purpose; confidences straddle 0.37.
    let confidences = [0.9, 0.37, 0.2, 0.5, 0.0, 1.0];
    let classifier = dir.path().join("cls.jsonl");
    let rows: Vec<(&str, &str, f64)> = examples
        .iter()
        .zip(confidences)
        .map(|(e, c)| (e.question_id.as_str(), "zzzz", c))
        .collect();
    write_preds(&classifier, &rows);
    let chosen = |r: &serde_json::Value| -> Vec<String> {
        r["ensemble"]["classifier_chosen"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap().to_string())
            .collect()
    };
    let r = eval(&oracle, &["--ensemble-preds", s(&classifier)]);
    let expect: Vec<String> = examples
        .iter()
        .zip(confidences)
        .filter(|(_, c)| *c > 0.37)
        .map(|(e, _)| e.question_id.clone())
        .collect();
    assert_eq!(chosen(&r), expect);
    assert!((r["anls"].as_f64().unwrap() - 3.0 / 6.0).abs() < 1e-12);

    let r = eval(&oracle, &["--ensemble-preds", s(&classifier), "--ensemble-tau", "1.0"]);
    assert!(chosen(&r).is_empty());
    assert_eq!(r["anls"], 1.0);
    let r = eval(&oracle, &["--ensemble-preds", s(&classifier), "--ensemble-tau", "0.0"]);
    assert_eq!(chosen(&r).len(), 5);
}
