use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_json, write_json, Error, Result};

/// Sparse real vector with strictly increasing column indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    pub dim: usize,
    pub entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn new(dim: usize, mut entries: Vec<(u32, f64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::invalid(format!("duplicate sparse index {}", w[0].0)));
            }
        }
        if let Some(&(last, _)) = entries.last() {
            if last as usize >= dim {
                return Err(Error::Dimension(format!("index {last} outside dimension {dim}")));
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * dense[i as usize]).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            d[i as usize] = v;
        }
        d
    }
}

/// Fitted TF-IDF weighting: smoothed idf `ln((1+N)/(1+df)) + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    terms: Vec<String>,
    idf: Vec<f64>,
    n_docs: usize,
    #[serde(skip)]
    vocabulary: HashMap<String, usize>,
}

impl TfidfModel {
    /// Assembles a model from columns; terms must be unique.
    pub fn from_parts(terms: Vec<String>, idf: Vec<f64>, n_docs: usize) -> Result<Self> {
        if terms.len() != idf.len() {
            return Err(Error::Dimension(format!(
                "{} terms but {} idf weights",
                terms.len(),
                idf.len()
            )));
        }
        let mut vocabulary = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if vocabulary.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate tf-idf term {t:?}")));
            }
        }
        Ok(Self { terms, idf, n_docs, vocabulary })
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn column(&self, term: &str) -> Option<usize> {
        self.vocabulary.get(term).copied()
    }

    pub fn idf_of(&self, term: &str) -> Option<f64> {
        self.column(term).map(|c| self.idf[c])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let raw: TfidfModel = read_json(path.as_ref())?;
        Self::from_parts(raw.terms, raw.idf, raw.n_docs)
    }
}

/// Fits document frequencies. Columns are ordered lexicographically by term,
/// so the fitted model does not depend on document order.
pub fn fit_tfidf<S: AsRef<str>>(documents: &[Vec<S>]) -> Result<TfidfModel> {
    if documents.is_empty() {
        return Err(Error::invalid("tf-idf needs at least one document"));
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in documents {
        let distinct: BTreeSet<&str> = doc.iter().map(AsRef::as_ref).collect();
        for t in distinct {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    if df.is_empty() {
        return Err(Error::invalid("all documents are empty"));
    }
    let mut terms: Vec<&str> = df.keys().copied().collect();
    terms.sort_unstable();
    let n = documents.len() as f64;
    let idf = terms
        .iter()
        .map(|t| ((1.0 + n) / (1.0 + df[t] as f64)).ln() + 1.0)
        .collect();
    TfidfModel::from_parts(
        terms.into_iter().map(str::to_string).collect(),
        idf,
        documents.len(),
    )
}

/// Raw count × idf, L2-normalized. Unseen terms are dropped.
pub fn transform_tfidf<S: AsRef<str>>(model: &TfidfModel, document: &[S]) -> SparseVector {
    let mut counts: HashMap<usize, u32> = HashMap::new();
    for t in document {
        if let Some(c) = model.column(t.as_ref()) {
            *counts.entry(c).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(u32, f64)> = counts
        .into_iter()
        .map(|(c, n)| (c as u32, f64::from(n) * model.idf[c]))
        .collect();
    entries.sort_by_key(|e| e.0);
    let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for e in &mut entries {
            e.1 /= norm;
        }
    }
    SparseVector {
        dim: model.dim(),
        entries,
    }
}
