use proptest::prelude::*;

use techdom::features::{
    encode_subwords, fit_tfidf, load_word_embeddings, tokenize_basic, transform_tfidf, write_word2vec, SubwordTokenizer,
    WordPiece,
};
use techdom::seed::RngStreams;

/// Reference splitter for Latin/Devanagari text: letters, digits, Devanagari
/// combining signs and zero-width joiners continue a term, everything else
/// ends it.
fn reference_split(text: &str) -> Vec<String> {
    let joins = |c: char| {
        c.is_alphanumeric()
            || matches!(c as u32, 0x0900..=0x0903 | 0x093A..=0x094F | 0x0951..=0x0957 | 0x0962..=0x0963 | 0x200C | 0x200D)
    };
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if joins(c) {
            cur.push_str(&c.to_lowercase().to_string());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn mixed_char() -> impl Strategy<Value = char> {
    prop_oneof![
        prop::char::range('a', 'z'),
        prop::char::range('A', 'Z'),
        prop::char::range('0', '9'),
        prop::char::range('\u{0905}', '\u{0939}'),
        prop::char::range('\u{093E}', '\u{094D}'),
        prop::sample::select(vec![' ', ' ', '\t', ',', '.', '!', '?', ';', ':', '-', '(', ')', '"', '\u{0964}', '\u{200D}', '\u{0966}', '%', '+']),
    ]
}

proptest! {
    #[test]
    fn basic_tokenizer_matches_reference_splitter(chars in prop::collection::vec(mixed_char(), 0..80)) {
        let text: String = chars.into_iter().collect();
        prop_assert_eq!(tokenize_basic(&text), reference_split(&text));
    }

    #[test]
    fn tfidf_depends_on_term_multiset_only(doc in prop::collection::vec(0usize..6, 0..12), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let vocab = ["a", "b", "c", "d", "e", "zz"];
        let corpus = vec![vec!["a", "b"], vec!["a", "c", "d"], vec!["e", "a"]];
        let model = fit_tfidf(&corpus).unwrap();
        let terms: Vec<&str> = doc.iter().map(|&i| vocab[i]).collect();
        let mut shuffled = terms.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = transform_tfidf(&model, &terms);
        let b = transform_tfidf(&model, &shuffled);
        prop_assert_eq!(&a, &b);
        if !a.entries.is_empty() {
            prop_assert!((a.norm() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn tfidf_fit_ignores_document_order(docs in prop::collection::vec(prop::collection::vec(0usize..8, 0..6), 1..8), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        prop_assume!(docs.iter().any(|d| !d.is_empty()));
        let words: Vec<Vec<String>> = docs.iter().map(|d| d.iter().map(|i| format!("w{i}")).collect()).collect();
        let mut shuffled = words.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = fit_tfidf(&words).unwrap();
        let b = fit_tfidf(&shuffled).unwrap();
        prop_assert_eq!(a.terms(), b.terms());
        prop_assert_eq!(a.idf(), b.idf());
        prop_assert!(a.idf().iter().all(|&w| w >= 1.0));
        // columns are a bijection onto [0, V)
        for (i, t) in a.terms().iter().enumerate() {
            prop_assert_eq!(a.column(t), Some(i));
        }
    }

    #[test]
    fn subword_masks_are_prefix_ones(text in "[a-z ]{0,200}", max_len in 2usize..40) {
        let wp = WordPiece::from_corpus(&["binary search tree", "compiler kernel cache"], 1000, true).unwrap();
        let tok = SubwordTokenizer::from_wordpiece(wp).unwrap();
        let s = encode_subwords(&text, &tok, max_len).unwrap();
        prop_assert_eq!(s.ids.len(), max_len);
        prop_assert_eq!(s.mask.len(), max_len);
        let ones = s.real_len();
        prop_assert!(s.mask[..ones].iter().all(|&m| m == 1));
        prop_assert!(s.mask[ones..].iter().all(|&m| m == 0));
        prop_assert_eq!(s.ids[0], tok.specials().cls);
        prop_assert_eq!(s.ids[ones - 1], tok.specials().sep);
    }
}

#[test]
fn tokenizer_examples() {
    assert_eq!(tokenize_basic("Binary search, tree."), ["binary", "search", "tree"]);
    assert!(tokenize_basic("").is_empty());
    let hindi = "Kernel में क्वांटम compiler, और नेटवर्क!";
    assert_eq!(tokenize_basic(hindi), reference_split(hindi));
    assert_eq!(tokenize_basic(hindi)[2], "क्वांटम");
}

#[test]
fn tfidf_two_document_example() {
    let model = fit_tfidf(&[vec!["a", "b"], vec!["a"]]).unwrap();
    assert_eq!(model.idf_of("a"), Some(1.0));
    let idf_b = (3.0f64 / 2.0).ln() + 1.0;
    assert!((model.idf_of("b").unwrap() - 1.4055).abs() < 1e-4);
    let v = transform_tfidf(&model, &["a", "b"]).to_dense();
    let n = (1.0 + idf_b * idf_b).sqrt();
    assert!((v[0] - 1.0 / n).abs() < 1e-15 && (v[1] - idf_b / n).abs() < 1e-15);
    assert!((v[0] - 0.580).abs() < 1e-3 && (v[1] - 0.815).abs() < 1e-3);
    // a term in every document has the smallest idf
    assert!(model.idf().iter().all(|&w| w >= model.idf_of("a").unwrap()));
    assert!(transform_tfidf(&model, &["zzz"]).entries.is_empty());
}

#[test]
fn truncation_keeps_separator() {
    let wp = WordPiece::from_corpus(&["alpha beta gamma"], 1000, true).unwrap();
    let tok = SubwordTokenizer::from_wordpiece(wp).unwrap();
    let long = "alpha beta gamma ".repeat(100);
    let s = encode_subwords(&long, &tok, 16).unwrap();
    assert_eq!(s.ids.len(), 16);
    assert_eq!(s.real_len(), 16);
    assert_eq!(*s.ids.last().unwrap(), tok.specials().sep);
    assert!(encode_subwords("x", &tok, 513).is_err());
    assert!(encode_subwords("x", &tok, 512).is_ok());
}

#[test]
fn embedding_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.txt");
    let rows = vec![("नेटवर्क".to_string(), vec![0.1, -2.5e-7, 3.0]), ("kernel".to_string(), vec![1.0 / 3.0, 0.0, -1.0])];
    write_word2vec(&path, &rows).unwrap();
    let table = load_word_embeddings(&path, &RngStreams::new(1)).unwrap();
    assert_eq!((table.len(), table.dim()), (2, 3));
    for (w, v) in &rows {
        assert_eq!(table.lookup(w), v.as_slice());
    }
    assert_eq!(table.lookup("missing"), table.oov());
    assert!(table.oov().iter().all(|v| v.abs() <= 0.25));
    std::fs::write(&path, "2 3\na 1 2 3\nb 1 2 3 4\n").unwrap();
    let err = load_word_embeddings(&path, &RngStreams::new(1)).unwrap_err().to_string();
    assert!(err.contains('3'), "{err}");
}
