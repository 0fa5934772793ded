//! Labeled sentence corpora: TSV loading, label vocabularies, stratified
//! dev splits and summary statistics.
//!
//! Corpus files are UTF-8, no header, one `text<TAB>label` record per line.
//! Blind test files carry only the text column.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::tokenize_basic;

/// One sentence with its gold domain label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: String,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Result<Self> {
        let text = text.into().trim().to_string();
        let label = label.into().trim().to_string();
        if text.is_empty() {
            return Err(Error::invalid("example text is empty"));
        }
        check_label(&label).map_err(Error::InvalidInput)?;
        Ok(Self { text, label })
    }
}

fn check_label(label: &str) -> std::result::Result<(), String> {
    if label.is_empty() {
        return Err("label is empty".into());
    }
    if label.contains(['\t', '\n', '\r']) {
        return Err(format!("label {label:?} contains a tab or newline"));
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads a two-column TSV corpus, preserving file order and skipping blank lines.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let content = read_lines(path)?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(fail(format!("expected 2 tab-separated columns, found {}", cols.len())));
        }
        let text = cols[0].trim();
        let label = cols[1].trim();
        if text.is_empty() {
            return Err(fail("empty text column".into()));
        }
        check_label(label).map_err(fail)?;
        out.push(LabeledExample {
            text: text.to_string(),
            label: label.to_string(),
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(out)
}

/// Loads a blind (single-column) file: one sentence per non-blank line.
///
/// Two-column lines are accepted and their label column ignored, so labeled
/// dev files can be fed to prediction directly.
pub fn load_unlabeled(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let content = read_lines(path)?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() > 2 || cols[0].trim().is_empty() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected one sentence per line".into(),
            });
        }
        out.push(cols[0].trim().to_string());
    }
    if out.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(out)
}

/// Writes examples in the TSV corpus format.
pub fn write_corpus(path: impl AsRef<Path>, examples: &[LabeledExample]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = String::new();
    for ex in examples {
        if ex.text.contains(['\t', '\n', '\r']) {
            return Err(Error::invalid(format!(
                "text {:?} cannot be stored in a TSV corpus",
                ex.text
            )));
        }
        let _ = writeln!(buf, "{}\t{}", ex.text, ex.label);
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Ordered label set with index lookup. Indices follow lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelVocabulary {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocabulary {
    /// Builds a vocabulary from an explicit ordered label list.
    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("label vocabulary is empty"));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            check_label(l).map_err(Error::InvalidInput)?;
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    /// Maps labels to indices, failing on the first label outside the vocabulary.
    pub fn encode<'a>(&self, labels: impl IntoIterator<Item = &'a str>) -> Result<Vec<usize>> {
        labels
            .into_iter()
            .map(|l| {
                self.index_of(l).ok_or_else(|| Error::UnknownLabel {
                    label: l.to_string(),
                })
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.labels.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_lines(path)?;
        Self::from_labels(
            text.lines()
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        )
    }
}

impl TryFrom<Vec<String>> for LabelVocabulary {
    type Error = Error;
    fn try_from(labels: Vec<String>) -> Result<Self> {
        Self::from_labels(labels)
    }
}

impl From<LabelVocabulary> for Vec<String> {
    fn from(v: LabelVocabulary) -> Self {
        v.labels
    }
}

/// Distinct labels of `examples`, sorted lexicographically.
pub fn build_label_vocab(examples: &[LabeledExample]) -> Result<LabelVocabulary> {
    let mut labels: Vec<String> = examples.iter().map(|e| e.label.clone()).collect();
    labels.sort();
    labels.dedup();
    if labels.is_empty() {
        return Err(Error::invalid("no labels found: example list is empty"));
    }
    LabelVocabulary::from_labels(labels)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub dev: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl DatasetSplit {
    pub fn new(
        train: Vec<LabeledExample>,
        dev: Vec<LabeledExample>,
        test: Vec<LabeledExample>,
    ) -> Result<Self> {
        let split = Self { train, dev, test };
        let vocab = split.label_vocab()?;
        for ex in &split.test {
            if vocab.index_of(&ex.label).is_none() {
                return Err(Error::UnknownLabel {
                    label: ex.label.clone(),
                });
            }
        }
        Ok(split)
    }

    /// Vocabulary over train ∪ dev.
    pub fn label_vocab(&self) -> Result<LabelVocabulary> {
        if self.train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let all: Vec<LabeledExample> = self.train.iter().chain(&self.dev).cloned().collect();
        build_label_vocab(&all)
    }
}

/// Splits `examples` into train/dev, holding out roughly `dev_fraction` of
/// every label. Both halves keep the input order.
pub fn stratified_split(
    examples: &[LabeledExample],
    dev_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "dev_fraction must lie in (0, 1), got {dev_fraction}"
        )));
    }
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        by_label.entry(ex.label.as_str()).or_default().push(i);
    }
    if by_label.is_empty() {
        return Err(Error::invalid("cannot split an empty example list"));
    }
    let singletons: Vec<String> = by_label
        .iter()
        .filter(|(_, idx)| idx.len() < 2)
        .map(|(l, _)| l.to_string())
        .collect();
    if !singletons.is_empty() {
        return Err(Error::TooFewPerLabel(singletons));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_dev = vec![false; examples.len()];
    for idx in by_label.values_mut() {
        let n = idx.len();
        let n_dev = ((n as f64 * dev_fraction).round() as usize).clamp(1, n - 1);
        idx.shuffle(&mut rng);
        for &i in &idx[..n_dev] {
            in_dev[i] = true;
        }
    }
    let mut split = DatasetSplit::default();
    for (ex, dev) in examples.iter().zip(in_dev) {
        if dev {
            split.dev.push(ex.clone());
        } else {
            split.train.push(ex.clone());
        }
    }
    Ok(split)
}

/// Per-label counts and token-length distribution of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub examples: usize,
    pub label_counts: BTreeMap<String, usize>,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub mean_tokens: f64,
    /// (percentile, token length) pairs, nearest-rank definition.
    pub token_length_percentiles: Vec<(u32, usize)>,
}

pub const REPORTED_PERCENTILES: [u32; 5] = [50, 75, 90, 95, 99];

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[usize], percentile: u32) -> usize {
    assert!(!sorted.is_empty());
    let rank = (f64::from(percentile) / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn corpus_stats(examples: &[LabeledExample]) -> Result<CorpusStats> {
    if examples.is_empty() {
        return Err(Error::invalid("cannot compute statistics of an empty corpus"));
    }
    let mut label_counts = BTreeMap::new();
    for ex in examples {
        *label_counts.entry(ex.label.clone()).or_insert(0) += 1;
    }
    let mut lengths: Vec<usize> = examples
        .iter()
        .map(|e| tokenize_basic(&e.text).len())
        .collect();
    lengths.sort_unstable();
    let total: usize = lengths.iter().sum();
    Ok(CorpusStats {
        examples: examples.len(),
        label_counts,
        min_tokens: lengths[0],
        max_tokens: lengths[lengths.len() - 1],
        mean_tokens: total as f64 / lengths.len() as f64,
        token_length_percentiles: REPORTED_PERCENTILES
            .iter()
            .map(|&p| (p, nearest_rank(&lengths, p)))
            .collect(),
    })
}

impl CorpusStats {
    /// `key=value` text report.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "examples={}", self.examples);
        let _ = writeln!(s, "labels={}", self.label_counts.len());
        for (label, n) in &self.label_counts {
            let _ = writeln!(s, "count.{label}={n}");
        }
        let _ = writeln!(s, "tokens.min={}", self.min_tokens);
        let _ = writeln!(s, "tokens.max={}", self.max_tokens);
        let _ = writeln!(s, "tokens.mean={:.2}", self.mean_tokens);
        for (p, v) in &self.token_length_percentiles {
            let _ = writeln!(s, "tokens.p{p}={v}");
        }
        s
    }
}
