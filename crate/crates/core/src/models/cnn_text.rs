//! CNN-non-static sentence classifier: a trainable word-embedding table
//! initialized from pretrained vectors, feeding the convolutional head.

use std::collections::HashMap;

use candle_core::{Device, Tensor};

use super::heads::{CnnHead, CnnHeadConfig};
use super::nn::{dropout, softmax_rows, Dropout};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::features::EmbeddingTable;
use crate::seed::RngStreams;

pub const PAD_ROW: u32 = 0;
pub const OOV_ROW: u32 = 1;
const FIRST_WORD_ROW: u32 = 2;
pub const EMBEDDING_PARAM: &str = "embedding.weight";

#[derive(Debug, Clone)]
pub struct CnnTextModel {
    words: Vec<String>,
    index: HashMap<String, u32>,
    embedding: ParamStore,
    head: CnnHead,
    max_len: usize,
}

impl CnnTextModel {
    /// Row 0 is the zero padding vector, row 1 the OOV vector, then the table's words.
    pub fn new(table: &EmbeddingTable, config: CnnHeadConfig, n_classes: usize, max_len: usize, seeds: &RngStreams) -> Result<Self> {
        let d = table.dim();
        let mut data = vec![0.0; d];
        data.extend_from_slice(table.oov());
        data.extend_from_slice(table.matrix());
        let mut embedding = ParamStore::new();
        embedding.from_vec(EMBEDDING_PARAM, data, &[table.len() + 2, d])?;
        let head = CnnHead::new(config, d, n_classes, seeds)?;
        Self::from_parts(table.words().to_vec(), embedding, head, max_len)
    }

    pub fn from_parts(words: Vec<String>, embedding: ParamStore, head: CnnHead, max_len: usize) -> Result<Self> {
        let dims = embedding.get(EMBEDDING_PARAM)?.dims().to_vec();
        if dims.len() != 2 || dims[0] != words.len() + 2 {
            return Err(Error::Dimension(format!(
                "embedding matrix {dims:?} does not match {} words",
                words.len()
            )));
        }
        if dims[1] != head.input_dim() {
            return Err(Error::Dimension(format!(
                "embedding dimension {} differs from conv input width {}",
                dims[1],
                head.input_dim()
            )));
        }
        if max_len == 0 {
            return Err(Error::invalid("max_len must be positive"));
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32 + FIRST_WORD_ROW))
            .collect();
        Ok(Self { words, index, embedding, head, max_len })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn embedding(&self) -> &ParamStore {
        &self.embedding
    }

    pub fn head(&self) -> &CnnHead {
        &self.head
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn deep_clone(&self) -> Result<Self> {
        Self::from_parts(
            self.words.clone(),
            self.embedding.deep_clone()?,
            self.head.deep_clone()?,
            self.max_len,
        )
    }

    /// Embedding rows for `terms`, truncated to `max_len`.
    pub fn term_ids<S: AsRef<str>>(&self, terms: &[S]) -> Vec<u32> {
        terms
            .iter()
            .take(self.max_len)
            .map(|t| self.index.get(t.as_ref()).copied().unwrap_or(OOV_ROW))
            .collect()
    }
}

/// Forward pass over term-id sequences. Each batch is padded with the zero
/// row to its longest document, and at least to the largest filter width.
pub fn cnn_text_forward(model: &CnnTextModel, docs: &[Vec<u32>], mut drop: Option<&mut Dropout>) -> Result<Tensor> {
    if docs.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(i) = docs.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!(
            "document {i} has no terms; cnn input needs at least one term"
        )));
    }
    let longest = docs.iter().map(Vec::len).max().unwrap_or(0);
    let len = longest.max(model.head.config().max_width());
    let mut ids = Vec::with_capacity(docs.len() * len);
    let mut mask = Vec::with_capacity(docs.len() * len);
    for d in docs {
        ids.extend_from_slice(d);
        ids.extend(std::iter::repeat_n(PAD_ROW, len - d.len()));
        mask.extend(std::iter::repeat_n(1.0, d.len()));
        mask.extend(std::iter::repeat_n(0.0, len - d.len()));
    }
    let ids = Tensor::from_vec(ids, (docs.len() * len,), &Device::Cpu)?;
    let mask = Tensor::from_vec(mask, (docs.len(), len), &Device::Cpu)?;
    let table = model.embedding.get(EMBEDDING_PARAM)?;
    let d = table.dims()[1];
    let states = table.embedding(&ids)?.reshape((docs.len(), len, d))?;
    let states = dropout(&states, drop.as_deref_mut())?;
    softmax_rows(&model.head.logits(&states, &mask, drop)?)
}
