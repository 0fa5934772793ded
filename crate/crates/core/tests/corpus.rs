use std::collections::BTreeMap;

use proptest::prelude::*;

use techdom::corpus::{build_label_vocab, corpus_stats, load_corpus, stratified_split, write_corpus, LabeledExample};

fn field() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9\u{0905}-\u{0939}][a-zA-Z0-9 \u{0905}-\u{0939}\u{093E}-\u{094D},.]{0,30}[a-zA-Z0-9\u{0905}-\u{0939}]"
}

fn examples(max: usize) -> impl Strategy<Value = Vec<LabeledExample>> {
    prop::collection::vec((field(), prop::sample::select(vec!["chem", "cse", "law", "phys"])), 1..max)
        .prop_map(|v| v.into_iter().map(|(t, l)| LabeledExample::new(t, l).unwrap()).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_load_is_identity(data in examples(40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        write_corpus(&path, &data).unwrap();
        prop_assert_eq!(load_corpus(&path).unwrap(), data);
    }

    #[test]
    fn vocabulary_ignores_example_order(mut data in examples(40)) {
        let a = build_label_vocab(&data).unwrap();
        data.reverse();
        let b = build_label_vocab(&data).unwrap();
        prop_assert_eq!(a.labels(), b.labels());
        for (i, l) in a.labels().iter().enumerate() {
            prop_assert_eq!(a.index_of(l), Some(i));
        }
    }

    #[test]
    fn split_is_stratified_and_partitions(data in examples(120), frac in 0.05f64..0.95, seed in any::<u64>()) {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &data {
            *counts.entry(e.label.as_str()).or_default() += 1;
        }
        prop_assume!(counts.values().all(|&n| n >= 2));
        let split = stratified_split(&data, frac, seed).unwrap();
        prop_assert_eq!(split.train.len() + split.dev.len(), data.len());
        let mut all: Vec<_> = split.train.iter().chain(&split.dev).cloned().collect();
        let mut orig = data.clone();
        all.sort_by(|a, b| (&a.text, &a.label).cmp(&(&b.text, &b.label)));
        orig.sort_by(|a, b| (&a.text, &a.label).cmp(&(&b.text, &b.label)));
        prop_assert_eq!(all, orig);
        for (label, &n) in &counts {
            let d = split.dev.iter().filter(|e| e.label == *label).count();
            prop_assert!(((d as f64 / n as f64) - frac).abs() <= 1.0 / n as f64 + 1e-12);
        }
        prop_assert_eq!(stratified_split(&data, frac, seed).unwrap(), split);
    }

    #[test]
    fn percentiles_match_sorted_lengths(data in examples(60)) {
        let stats = corpus_stats(&data).unwrap();
        let mut lens: Vec<usize> = data.iter().map(|e| techdom::features::tokenize_basic(&e.text).len()).collect();
        lens.sort();
        for &(p, v) in &stats.token_length_percentiles {
            // smallest length with at least p% of the corpus at or below it
            let want = *lens.iter().find(|&&l| {
                100 * lens.iter().filter(|&&m| m <= l).count() >= p as usize * lens.len()
            }).unwrap();
            prop_assert_eq!(v, want);
        }
        prop_assert_eq!(stats.label_counts.values().sum::<usize>(), data.len());
    }
}

#[test]
fn balanced_split_counts() {
    let data: Vec<_> = (0..100)
        .map(|i| LabeledExample::new(format!("sentence {i}"), if i % 2 == 0 { "a" } else { "b" }).unwrap())
        .collect();
    let split = stratified_split(&data, 0.2, 5).unwrap();
    for l in ["a", "b"] {
        assert_eq!(split.dev.iter().filter(|e| e.label == l).count(), 10);
    }
}

#[test]
fn split_lists_every_singleton_label() {
    let data = vec![
        LabeledExample::new("x", "a").unwrap(),
        LabeledExample::new("y", "a").unwrap(),
        LabeledExample::new("z", "b").unwrap(),
        LabeledExample::new("w", "c").unwrap(),
    ];
    let err = stratified_split(&data, 0.5, 1).unwrap_err().to_string();
    assert!(err.contains('b') && err.contains('c'), "{err}");
}
