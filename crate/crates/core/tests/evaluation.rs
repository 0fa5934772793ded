use proptest::prelude::*;

use techdom::corpus::{LabelVocabulary, LabeledExample};
use techdom::evaluation::{
    comparison_table, confusion_grid, confusion_matrix, evaluate, format_percent, macro_f1, parse_confusion_grid,
    per_class_prf, render_confusion, EvaluationReport,
};
use techdom::models::Classifier;
use techdom::Result;

/// Per-class TP/FP/FN straight from the pairs, no matrix involved.
fn oracle(gold: &[usize], pred: &[usize], k: usize) -> (Vec<(f64, f64, f64)>, f64) {
    let mut out = Vec::new();
    for c in 0..k {
        let mut tp = 0u64;
        let mut fp = 0u64;
        let mut fn_ = 0u64;
        for (&g, &p) in gold.iter().zip(pred) {
            match (g == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        out.push((p, r, f));
    }
    let macro_ = out.iter().map(|s| s.2).sum::<f64>() / k as f64;
    (out, macro_)
}

fn pairs() -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>)> {
    (1usize..=8, 1usize..=200).prop_flat_map(|(k, n)| {
        (Just(k), prop::collection::vec(0..k, n), prop::collection::vec(0..k, n))
    })
}

fn vocab(k: usize) -> LabelVocabulary {
    LabelVocabulary::from_labels((0..k).map(|i| format!("c{i}")).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_brute_force((k, gold, pred) in pairs()) {
        let cm = confusion_matrix(&gold, &pred, k).unwrap();
        for i in 0..k {
            for j in 0..k {
                let n = gold.iter().zip(&pred).filter(|&(&g, &p)| g == i && p == j).count() as u64;
                prop_assert_eq!(cm.cell(i, j), n);
            }
            prop_assert_eq!(cm.row_sum(i), gold.iter().filter(|&&g| g == i).count() as u64);
        }
        prop_assert_eq!(cm.total(), gold.len() as u64);
        let (want, want_macro) = oracle(&gold, &pred, k);
        let got = per_class_prf(&cm);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g.precision - w.0).abs() <= 1e-12);
            prop_assert!((g.recall - w.1).abs() <= 1e-12);
            prop_assert!((g.f1 - w.2).abs() <= 1e-12);
        }
        let f1: Vec<f64> = got.iter().map(|s| s.f1).collect();
        prop_assert!((macro_f1(&f1).unwrap() - want_macro).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn joint_permutation_leaves_report_unchanged((k, gold, pred) in pairs(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut idx: Vec<usize> = (0..gold.len()).collect();
        idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let g2: Vec<usize> = idx.iter().map(|&i| gold[i]).collect();
        let p2: Vec<usize> = idx.iter().map(|&i| pred[i]).collect();
        let v = vocab(k);
        let a = EvaluationReport::from_predictions(&v, &gold, &pred, "m", "d").unwrap();
        let b = EvaluationReport::from_predictions(&v, &g2, &p2, "m", "d").unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn relabeling_permutes_matrix_and_keeps_scores((k, gold, pred) in pairs(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut pi: Vec<usize> = (0..k).collect();
        pi.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let g2: Vec<usize> = gold.iter().map(|&c| pi[c]).collect();
        let p2: Vec<usize> = pred.iter().map(|&c| pi[c]).collect();
        let a = confusion_matrix(&gold, &pred, k).unwrap();
        let b = confusion_matrix(&g2, &p2, k).unwrap();
        for i in 0..k {
            for j in 0..k {
                prop_assert_eq!(a.cell(i, j), b.cell(pi[i], pi[j]));
            }
        }
        let v = vocab(k);
        let ra = EvaluationReport::from_predictions(&v, &gold, &pred, "m", "d").unwrap();
        let rb = EvaluationReport::from_predictions(&v, &g2, &p2, "m", "d").unwrap();
        prop_assert_eq!(ra.accuracy, rb.accuracy);
        prop_assert!((ra.macro_f1 - rb.macro_f1).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&ra.accuracy) && (0.0..=1.0).contains(&ra.macro_f1));
        prop_assert_eq!(ra.accuracy, (0..k).map(|c| a.cell(c, c)).sum::<u64>() as f64 / gold.len() as f64);
        let mean = ra.per_class.iter().map(|c| c.f1).sum::<f64>() / k as f64;
        prop_assert_eq!(ra.macro_f1, mean);
    }

    #[test]
    fn text_grid_parses_back((k, gold, pred) in pairs()) {
        let cm = confusion_matrix(&gold, &pred, k).unwrap();
        let labels: Vec<String> = (0..k).map(|i| format!("label_{i}")).collect();
        let grid = confusion_grid(&cm, &labels).unwrap();
        prop_assert_eq!(parse_confusion_grid(&grid, k).unwrap(), cm.rows());
    }
}

struct Echo {
    labels: LabelVocabulary,
    gold: Vec<String>,
}

impl Classifier for Echo {
    fn label_vocab(&self) -> &LabelVocabulary {
        &self.labels
    }
    fn predict_indices(&self, texts: &[String]) -> Result<Vec<usize>> {
        Ok(texts.iter().map(|t| {
            let i: usize = t.parse().unwrap();
            self.labels.index_of(&self.gold[i]).unwrap()
        }).collect())
    }
}

struct Constant(LabelVocabulary);

impl Classifier for Constant {
    fn label_vocab(&self) -> &LabelVocabulary {
        &self.0
    }
    fn predict_indices(&self, texts: &[String]) -> Result<Vec<usize>> {
        Ok(vec![0; texts.len()])
    }
}

fn numbered(labels: &[&str]) -> Vec<LabeledExample> {
    labels.iter().enumerate().map(|(i, l)| LabeledExample::new(i.to_string(), *l).unwrap()).collect()
}

#[test]
fn echo_model_scores_perfectly() {
    let data = numbered(&["a", "b", "c", "a"]);
    let echo = Echo { labels: vocab_of(&["a", "b", "c"]), gold: data.iter().map(|e| e.label.clone()).collect() };
    let r = evaluate(&echo, &data, "echo", "fixture").unwrap();
    assert_eq!((r.accuracy, r.macro_f1), (1.0, 1.0));
    assert!(r.warnings.is_empty());
}

fn vocab_of(labels: &[&str]) -> LabelVocabulary {
    LabelVocabulary::from_labels(labels.iter().map(|s| s.to_string()).collect()).unwrap()
}

#[test]
fn constant_model_on_balanced_pair() {
    let data = numbered(&["a", "b", "a", "b"]);
    let r = evaluate(&Constant(vocab_of(&["a", "b"])), &data, "const", "fixture").unwrap();
    assert_eq!(r.accuracy, 0.5);
    assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(r.warnings.len(), 1, "class b is never predicted");
}

#[test]
fn unknown_gold_label_is_an_error() {
    let data = numbered(&["a", "zzz"]);
    let err = evaluate(&Constant(vocab_of(&["a", "b"])), &data, "m", "d").unwrap_err();
    assert!(err.to_string().contains("zzz"), "{err}");
}

#[test]
fn hand_worked_macro_examples() {
    let v = vocab_of(&["A", "B"]);
    assert_eq!(EvaluationReport::from_predictions(&v, &[0, 0, 1, 1], &[0, 1, 0, 1], "m", "d").unwrap().macro_f1, 0.5);
    assert_eq!(EvaluationReport::from_predictions(&v, &[0, 1, 1], &[0, 0, 0], "m", "d").unwrap().macro_f1, 0.25);
    assert_eq!(EvaluationReport::from_predictions(&v, &[0, 1, 1], &[0, 1, 1], "m", "d").unwrap().macro_f1, 1.0);
}

#[test]
fn report_json_round_trip() {
    let v = vocab_of(&["x", "y", "z"]);
    let r = EvaluationReport::from_predictions(&v, &[0, 1, 2, 2], &[0, 2, 2, 1], "m", "d").unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.save(dir.path().join("r.json")).unwrap();
    assert_eq!(EvaluationReport::load(dir.path().join("r.json")).unwrap(), r);
}

#[test]
fn heatmap_and_grid_use_vocabulary_order() {
    let cm = confusion_matrix(&[0, 1], &[0, 1], 2).unwrap();
    let labels = vec!["chem".to_string(), "phys".to_string()];
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("cm.png");
    let grid = render_confusion(&cm, &labels, &png).unwrap();
    assert!(std::fs::metadata(&png).unwrap().len() > 0);
    let lines: Vec<Vec<&str>> = grid.lines().map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(lines[0][1..], ["chem", "phys"]);
    assert_eq!(lines[1], ["chem", "1", "0"]);
    assert_eq!(lines[2], ["phys", "0", "1"]);
    let img = image::open(&png).unwrap();
    assert_eq!((img.width(), img.height()), (64, 64));
}

fn report(dataset: &str, model: &str, f1: f64) -> EvaluationReport {
    let mut r = EvaluationReport::from_predictions(&vocab_of(&["a", "b"]), &[0, 1], &[0, 1], model, dataset).unwrap();
    r.macro_f1 = f1;
    r
}

#[test]
fn table_shapes_and_values() {
    let t = comparison_table(&[report("en", "m1", 0.8887)]).unwrap();
    assert_eq!(t.render_tsv(), "dataset\tm1\nen\t88.87*\n");
    let reports = [report("en", "m1", 0.5), report("en", "m2", 0.6), report("hi", "m1", 0.7), report("hi", "m2", 0.65)];
    let t = comparison_table(&reports).unwrap();
    assert_eq!((t.datasets.len(), t.models.len()), (2, 2));
    assert_eq!(t.row_maxima(0), vec![1]);
    assert_eq!(t.row_maxima(1), vec![0]);
    // parse-back: every cell is the source macro F1 × 100 at two decimals
    for line in t.render_tsv().lines().skip(1) {
        let cells: Vec<&str> = line.split('\t').collect();
        for (j, c) in cells[1..].iter().enumerate() {
            let src = reports.iter().find(|r| r.dataset_id == cells[0] && r.model_id == t.models[j]).unwrap();
            assert_eq!(c.trim_end_matches('*'), format_percent(src.macro_f1));
        }
    }
}
