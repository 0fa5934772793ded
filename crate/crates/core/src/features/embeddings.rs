use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::RngStreams;

/// Pretrained word vectors plus a single shared out-of-vocabulary vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    vectors: Vec<f64>,
    oov: Vec<f64>,
}

/// Half-width of the uniform OOV initialization interval.
pub const OOV_RANGE: f64 = 0.25;

impl EmbeddingTable {
    /// Builds a table from rows; the OOV vector is drawn from `U[-0.25, 0.25]^d`
    /// using the `oov` stream of `seeds`.
    pub fn from_rows(rows: Vec<(String, Vec<f64>)>, dim: usize, seeds: &RngStreams) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let mut words = Vec::with_capacity(rows.len());
        let mut index = HashMap::with_capacity(rows.len());
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        for (word, v) in rows {
            if v.len() != dim {
                return Err(Error::Dimension(format!(
                    "vector for {word:?} has {} values, expected {dim}",
                    v.len()
                )));
            }
            if index.contains_key(&word) {
                continue;
            }
            index.insert(word.clone(), words.len());
            words.push(word);
            vectors.extend(v);
        }
        let mut rng = seeds.stream("oov");
        let oov = (0..dim).map(|_| rng.gen_range(-OOV_RANGE..=OOV_RANGE)).collect();
        Ok(Self { words, index, dim, vectors, oov })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn oov(&self) -> &[f64] {
        &self.oov
    }

    /// Row-major `len × dim` matrix of stored vectors.
    pub fn matrix(&self) -> &[f64] {
        &self.vectors
    }

    /// Stored vector, or the OOV vector for unknown words.
    pub fn lookup(&self, word: &str) -> &[f64] {
        match self.index_of(word) {
            Some(i) => &self.vectors[i * self.dim..(i + 1) * self.dim],
            None => &self.oov,
        }
    }
}

/// Parses a word2vec text file: a `V d` header, then `word v1 … vd` rows.
pub fn load_word_embeddings(path: impl AsRef<Path>, seeds: &RngStreams) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fail = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| fail(1, "missing `V d` header".into()))?;
    let nums: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| fail(1, format!("bad header: {e}")))?;
    let [count, dim] = nums[..] else {
        return Err(fail(1, "header must be `V d`".into()));
    };
    let mut rows = Vec::with_capacity(count);
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().unwrap_or_default().to_string();
        let v: Vec<f64> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fail(i + 1, format!("bad number: {e}")))?;
        if v.len() != dim {
            return Err(fail(i + 1, format!("expected {dim} values, found {}", v.len())));
        }
        rows.push((word, v));
    }
    if rows.len() != count {
        return Err(fail(
            text.lines().count(),
            format!("header declares {count} vectors, file has {}", rows.len()),
        ));
    }
    EmbeddingTable::from_rows(rows, dim, seeds)
}

/// Writes vectors in word2vec text format. Values use shortest round-trip
/// formatting, so a reload reproduces them exactly.
pub fn write_word2vec(path: impl AsRef<Path>, rows: &[(String, Vec<f64>)]) -> Result<()> {
    let path = path.as_ref();
    let dim = rows.first().map_or(0, |r| r.1.len());
    let mut s = format!("{} {dim}\n", rows.len());
    for (w, v) in rows {
        s.push_str(w);
        for x in v {
            let _ = write!(s, " {x}");
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
