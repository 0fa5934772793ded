use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use techdom::corpus::{load_corpus, write_corpus, LabelVocabulary, LabeledExample};
use techdom::evaluation::{evaluate, format_percent, EvaluationReport};
use techdom::models::ClassifierModel;
use techdom::synthetic::{separable_corpus, write_embedding_fixture};
use techdom_cli::{RunManifest, MANIFEST_FILE};

fn techdom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_techdom"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_fixture(dir: &Path, name: &str, n: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    write_corpus(&path, &separable_corpus(n, seed)).unwrap();
    path
}

fn sha256_hex(path: &Path) -> String {
    Sha256::digest(std::fs::read(path).unwrap())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Every regular file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn train_svm(dir: &Path, train: &Path, out: &str) -> PathBuf {
    let out = dir.join(out);
    let o = techdom(&["train", "--arch", "svm_tfidf", "--train", p(train), "--out", p(&out), "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn train_svm_writes_model_directory_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_fixture(dir.path(), "train.tsv", 20, 1);
    let model = train_svm(dir.path(), &train, "model");
    for f in ["config.json", "labels.txt", "tfidf.json", "svm.safetensors", MANIFEST_FILE, "trace.json"] {
        assert!(model.join(f).is_file(), "missing {f}");
    }
    let manifest = RunManifest::load(&model.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.inputs["train"].sha256, sha256_hex(&train));
    assert_eq!(manifest.seed, 3);
    assert_eq!(manifest.config.training.seed, 3);
    assert_eq!(manifest.config.dev_fraction, Some(0.1));
    assert_eq!(manifest.out_dir, model);
    assert_eq!(manifest.command[..3], ["techdom", "train", "--arch"]);
}

#[test]
fn config_file_values_are_merged_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_fixture(dir.path(), "train.tsv", 40, 2);
    let dev = write_fixture(dir.path(), "dev.tsv", 12, 3);
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "svm_c = 2.5\nseed = 11\nngram_max = 2\n").unwrap();
    let out = dir.path().join("m");
    let o = techdom(&[
        "train", "--arch", "svm", "--train", p(&train), "--dev", p(&dev), "--out", p(&out),
        "--config", p(&cfg), "--seed", "5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = RunManifest::load(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.config.classifier.svm_c, 2.5);
    assert_eq!(m.config.classifier.ngram_max, 2);
    assert_eq!(m.seed, 5, "flag beats file");
    assert_eq!(m.config.dev_fraction, None);
    assert_eq!(m.inputs["config"].sha256, sha256_hex(&cfg));
    assert_eq!(m.inputs["dev"].sha256, sha256_hex(&dev));
    let model = ClassifierModel::load(&out).unwrap();
    assert_eq!(model.config(), &m.config.classifier);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_fixture(dir.path(), "train.tsv", 20, 1);
    let out = dir.path().join("m");
    let o = techdom(&["train", "--arch", "transformer_cls", "--train", p(&train), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--encoder"), "{}", stderr(&o));
    assert!(!out.exists(), "nothing is written on a usage error");

    let o = techdom(&["train", "--arch", "cnn", "--train", p(&train), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--embeddings"), "{}", stderr(&o));

    let o = techdom(&["train", "--arch", "svm_tfidf", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--train"), "{}", stderr(&o));

    let o = techdom(&["train", "--arch", "forest", "--train", p(&train), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(techdom(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(techdom(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let single = dir.path().join("single.tsv");
    let rows: Vec<LabeledExample> = (0..6).map(|i| LabeledExample::new(format!("bond {i}"), "chem").unwrap()).collect();
    write_corpus(&single, &rows).unwrap();
    let out = dir.path().join("m");
    let o = techdom(&["train", "--arch", "svm_tfidf", "--train", p(&single), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let missing = dir.path().join("nope.tsv");
    let o = techdom(&["train", "--arch", "svm_tfidf", "--train", p(&missing), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "epoch = 3\n").unwrap();
    let train = write_fixture(dir.path(), "train.tsv", 20, 1);
    let o = techdom(&["train", "--arch", "svm_tfidf", "--train", p(&train), "--out", p(&out), "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("epoch"), "{}", stderr(&o));

    let o = techdom(&["train", "--arch", "transformer_cls", "--encoder", "no-such-encoder", "--train", p(&train), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn evaluate_matches_library_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_fixture(dir.path(), "train.tsv", 80, 4);
    let model_dir = train_svm(dir.path(), &train, "svm");
    let data = write_fixture(dir.path(), "heldout.tsv", 40, 5);
    let out = dir.path().join("eval");
    let o = techdom(&["evaluate", "--model", p(&model_dir), "--data", p(&data), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = EvaluationReport::load(out.join("report.json")).unwrap();
    assert_eq!(report.model_id, "svm");
    assert_eq!(report.dataset_id, "heldout");
    assert_eq!(report.architecture.map(|a| a.as_str()), Some("svm_tfidf"));

    let model = ClassifierModel::load(&model_dir).unwrap();
    let direct = evaluate(&model, &load_corpus(&data).unwrap(), "svm", "heldout").unwrap();
    assert_eq!(report.macro_f1, direct.macro_f1);
    assert_eq!(report.confusion, direct.confusion);

    assert!(std::fs::metadata(out.join("confusion.png")).unwrap().len() > 0);
    let k = report.labels.len();
    let img = image::open(out.join("confusion.png")).unwrap();
    assert_eq!((img.width(), img.height()), (32 * k as u32, 32 * k as u32));
    assert!(std::fs::read_to_string(out.join("report.txt")).unwrap().contains(&format_percent(report.macro_f1)));
}

#[test]
fn evaluate_on_training_data_of_separable_fixture_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_fixture(dir.path(), "train.tsv", 40, 6);
    let model_dir = train_svm(dir.path(), &train, "svm");
    let out = dir.path().join("eval");
    let o = techdom(&["evaluate", "--model", p(&model_dir), "--data", p(&train), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(EvaluationReport::load(out.join("report.json")).unwrap().macro_f1, 1.0);
}

#[test]
fn evaluate_rejects_unseen_label_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_fixture(dir.path(), "train.tsv", 20, 1);
    let model_dir = train_svm(dir.path(), &train, "svm");
    let data = dir.path().join("odd.tsv");
    write_corpus(&data, &[LabeledExample::new("a lemma on graphs", "astro").unwrap()]).unwrap();
    let o = techdom(&["evaluate", "--model", p(&model_dir), "--data", p(&data), "--out", p(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("astro"), "{}", stderr(&o));
}

#[test]
fn predict_cardinality_closure_and_cross_check() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_fixture(dir.path(), "train.tsv", 60, 7);
    let model_dir = train_svm(dir.path(), &train, "svm");
    let vocab = LabelVocabulary::load(model_dir.join("labels.txt")).unwrap();

    let three = dir.path().join("three.txt");
    std::fs::write(&three, "बाजार में निवेश\nquantum field lattice\nthe compiler and the graph\n").unwrap();
    let out = dir.path().join("pred/three.txt");
    let o = techdom(&["predict", "--model", p(&model_dir), "--input", p(&three), "--output", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<String> = std::fs::read_to_string(&out).unwrap().lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| vocab.index_of(l).is_some()));

    let data = write_fixture(dir.path(), "dev.tsv", 30, 8);
    let eval_dir = dir.path().join("eval");
    assert!(techdom(&["evaluate", "--model", p(&model_dir), "--data", p(&data), "--out", p(&eval_dir)]).status.success());
    let blind = dir.path().join("blind.txt");
    let texts: String = load_corpus(&data).unwrap().iter().map(|e| format!("{}\n", e.text)).collect();
    std::fs::write(&blind, texts).unwrap();
    let pred = dir.path().join("blind.pred");
    assert!(techdom(&["predict", "--model", p(&model_dir), "--input", p(&blind), "--output", p(&pred)]).status.success());
    assert_eq!(
        std::fs::read_to_string(&pred).unwrap(),
        std::fs::read_to_string(eval_dir.join("predictions.txt")).unwrap()
    );

    let probs = dir.path().join("blind.probs");
    let o = techdom(&["predict", "--model", p(&model_dir), "--input", p(&blind), "--output", p(&probs), "--probs"]);
    assert!(o.status.success());
    for (row, label) in std::fs::read_to_string(&probs).unwrap().lines().zip(std::fs::read_to_string(&pred).unwrap().lines()) {
        let cells: Vec<&str> = row.split('\t').collect();
        assert_eq!(cells[0], label);
        let p: Vec<f64> = cells[1..].iter().map(|c| c.parse().unwrap()).collect();
        assert_eq!(p.len(), vocab.len());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let best = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(vocab.label(best), label);
    }
}

#[test]
fn predict_on_empty_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_fixture(dir.path(), "train.tsv", 20, 1);
    let model_dir = train_svm(dir.path(), &train, "svm");
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "\n\n").unwrap();
    let o = techdom(&["predict", "--model", p(&model_dir), "--input", p(&empty), "--output", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
}

fn stub_report(dir: &Path, dataset: &str, model: &str, labels: &[&str], f1: f64) {
    let v = LabelVocabulary::from_labels(labels.iter().map(|s| s.to_string()).collect()).unwrap();
    let gold: Vec<usize> = (0..labels.len()).collect();
    let mut r = EvaluationReport::from_predictions(&v, &gold, &gold, model, dataset).unwrap();
    r.macro_f1 = f1;
    let sub = dir.join(format!("{dataset}-{model}"));
    std::fs::create_dir_all(&sub).unwrap();
    r.save(sub.join("report.json")).unwrap();
}

fn report_cmd(dir: &Path) -> (Output, PathBuf) {
    let out = dir.join("table");
    let pattern = format!("{}/*/report.json", dir.display());
    (techdom(&["report", "--reports", &pattern, "--out", p(&out)]), out)
}

#[test]
fn report_builds_grid_with_marked_maxima() {
    let dir = tempfile::tempdir().unwrap();
    let f1 = [("en", "svm", 0.71234), ("en", "cnn", 0.80047), ("hi", "svm", 0.9), ("hi", "cnn", 0.655)];
    for (d, m, v) in f1 {
        stub_report(dir.path(), d, m, &["a", "b"], v);
    }
    let (o, out) = report_cmd(dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let tsv = std::fs::read_to_string(out.join("table.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.len() == 3));
    let models = &rows[0][1..];
    for row in &rows[1..] {
        let marked: Vec<usize> = (1..3).filter(|&j| row[j].ends_with('*')).collect();
        assert_eq!(marked.len(), 1);
        for j in 1..3 {
            let src = f1.iter().find(|(d, m, _)| *d == row[0] && *m == models[j - 1]).unwrap().2;
            assert_eq!(row[j].trim_end_matches('*'), format!("{:.2}", src * 100.0));
        }
    }
    assert!(out.join("table.txt").is_file());
    assert!(std::fs::read_to_string(out.join("table.md")).unwrap().contains("**"));
}

#[test]
fn report_single_and_inconsistent() {
    let dir = tempfile::tempdir().unwrap();
    stub_report(dir.path(), "en", "svm", &["a", "b"], 0.5);
    let (o, out) = report_cmd(dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let tsv = std::fs::read_to_string(out.join("table.tsv")).unwrap();
    assert_eq!(tsv, "dataset\tsvm\nen\t50.00*\n");

    stub_report(dir.path(), "en", "cnn", &["a", "c"], 0.6);
    let (o, _) = report_cmd(dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let empty = tempfile::tempdir().unwrap();
    let (o, _) = report_cmd(empty.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn stats_prints_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_fixture(dir.path(), "d.tsv", 40, 1);
    let out = dir.path().join("s");
    let o = techdom(&["stats", "--data", p(&data), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("mgmt"));
    assert!(out.join("stats.json").is_file());
}

#[test]
fn commands_are_idempotent_and_leave_inputs_alone() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_fixture(dir.path(), "train.tsv", 40, 9);
    let vectors = dir.path().join("vectors.txt");
    write_embedding_fixture(&vectors, 20, 9).unwrap();
    let inputs = [sha256_hex(&train), sha256_hex(&vectors)];

    let out = dir.path().join("cnn");
    let run = || {
        let o = techdom(&[
            "train", "--arch", "cnn", "--train", p(&train), "--embeddings", p(&vectors), "--out", p(&out),
            "--epochs", "2", "--batch-size", "8", "--seed", "4",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut files = snapshot(&out);
        // wall-clock seconds per epoch live in their own side file
        files.remove(Path::new("timings.json")).expect("timings written");
        files
    };
    let first = run();
    let second = run();
    assert_eq!(first, second);

    let eval = dir.path().join("eval");
    let evaluate_once = || {
        assert!(techdom(&["evaluate", "--model", p(&out), "--data", p(&train), "--out", p(&eval)]).status.success());
        snapshot(&eval)
    };
    assert_eq!(evaluate_once(), evaluate_once());
    assert_eq!(inputs, [sha256_hex(&train), sha256_hex(&vectors)]);
}

#[test]
fn transformer_run_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_fixture(dir.path(), "train.tsv", 40, 10);
    let out = dir.path().join("tcnn");
    let o = techdom(&[
        "train", "--arch", "transformer_cnn", "--encoder", "test-tiny-h16", "--train", p(&train), "--out", p(&out),
        "--epochs", "1", "--batch-size", "16", "--learning-rate", "0.001",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("encoder").is_dir());
    let m = RunManifest::load(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.encoder.as_deref(), Some("test-tiny-h16"));
    assert_eq!(m.config.training.learning_rate, Some(0.001));
    let pred = dir.path().join("p.txt");
    let o = techdom(&["predict", "--model", p(&out), "--input", p(&train), "--output", p(&pred)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&pred).unwrap().lines().count(), 40);
}
