//! Seeded synthetic corpora and embedding fixtures for tests and demos.
//!
//! Four technical domains, each with its own keyword list (one of them in
//! Devanagari), mixed with shared filler words.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::LabeledExample;
use crate::error::Result;
use crate::features::write_word2vec;
use crate::seed::RngStreams;

pub const LABELS: [&str; 4] = ["chem", "cse", "mgmt", "phys"];

const KEYWORDS: [&[&str]; 4] = [
    &["molecule", "reagent", "polymer", "catalyst", "titration", "isotope", "solvent", "enzyme"],
    &["compiler", "kernel", "algorithm", "database", "network", "recursion", "cache", "protocol"],
    &["प्रबंधन", "बाजार", "लेखा", "निवेश", "विपणन", "कर्मचारी", "बजट", "रणनीति"],
    &["quantum", "photon", "momentum", "gravity", "voltage", "entropy", "magnet", "plasma"],
];

const FILLERS: &[&str] = &[
    "the", "a", "of", "and", "is", "in", "this", "we", "study", "report", "describes", "new",
    "method", "results", "show", "for", "with", "on", "है", "का",
];

/// Every word the generators can emit, keywords first.
pub fn vocabulary() -> Vec<String> {
    KEYWORDS
        .iter()
        .flat_map(|k| k.iter())
        .chain(FILLERS.iter())
        .map(|w| w.to_string())
        .collect()
}

fn sentence(rng: &mut impl Rng, keywords: &[&str], n_keywords: usize) -> String {
    let n_fill = rng.gen_range(3..=7);
    let mut words: Vec<&str> = (0..n_keywords).map(|_| *keywords.choose(rng).unwrap()).collect();
    words.extend((0..n_fill).map(|_| *FILLERS.choose(rng).unwrap()));
    words.shuffle(rng);
    words.join(" ")
}

/// Labels cycle through [`LABELS`]; each sentence carries 2-4 keywords of
/// its own label only, so the classes are linearly separable.
pub fn separable_corpus(n: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = RngStreams::new(seed).stream("synthetic/separable");
    (0..n)
        .map(|i| {
            let c = i % LABELS.len();
            let k = rng.gen_range(2..=4);
            LabeledExample::new(sentence(&mut rng, KEYWORDS[c], k), LABELS[c]).unwrap()
        })
        .collect()
}

/// [`separable_corpus`] sentences whose labels are replaced, with
/// probability `noise`, by a different label chosen uniformly. Keywords
/// stay tied to the original domain, so they correlate with the label
/// without determining it.
pub fn noisy_corpus(n: usize, noise: f64, seed: u64) -> Vec<LabeledExample> {
    let mut rng = RngStreams::new(seed).stream("synthetic/noisy");
    (0..n)
        .map(|i| {
            let c = i % LABELS.len();
            let k = rng.gen_range(2..=4);
            let text = sentence(&mut rng, KEYWORDS[c], k);
            let label = if rng.gen_bool(noise) {
                (c + rng.gen_range(1..LABELS.len())) % LABELS.len()
            } else {
                c
            };
            LabeledExample::new(text, LABELS[label]).unwrap()
        })
        .collect()
}

/// Writes word2vec text vectors for [`vocabulary`]. Like real pretrained
/// vectors, keywords of one domain cluster: each is its domain's centroid
/// plus N(0, 0.5²) noise, and fillers are pure noise.
pub fn write_embedding_fixture(path: impl AsRef<Path>, dim: usize, seed: u64) -> Result<()> {
    let mut rng = RngStreams::new(seed).stream("synthetic/embeddings");
    let normal = Normal::new(0.0, 0.5).unwrap();
    let noise = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| normal.sample(rng)).collect() };
    let mut rows = Vec::new();
    for words in KEYWORDS {
        let centroid = noise(&mut rng);
        for w in words {
            let v = noise(&mut rng).iter().zip(&centroid).map(|(a, b)| a + b).collect();
            rows.push((w.to_string(), v));
        }
    }
    for w in FILLERS {
        rows.push((w.to_string(), noise(&mut rng)));
    }
    write_word2vec(path, &rows)
}
