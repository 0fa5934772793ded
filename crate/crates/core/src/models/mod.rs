//! The four classifier architectures behind one model type.
//!
//! - `svm_tfidf`: TF-IDF vectors into a linear one-vs-rest SVM.
//! - `cnn_text`: CNN-non-static over pretrained word embeddings.
//! - `transformer_cls`: linear softmax head on the encoder's `[CLS]` state.
//! - `transformer_cnn`: CNN head over all final-layer token states.

mod cnn_text;
mod encoder;
mod heads;
pub mod nn;
mod params;
mod svm;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use candle_core::{Device, Tensor, Var};
use serde::{Deserialize, Serialize};

pub use cnn_text::{cnn_text_forward, CnnTextModel, OOV_ROW, PAD_ROW};
pub use encoder::{
    cache_dir, registered_config, EncoderAdapter, EncoderConfig, EncoderOutput, EncoderSource,
    CACHE_DIR_ENV, REGISTERED_ENCODERS,
};
pub use heads::{transformer_cls_forward, transformer_cnn_forward, ClsHead, CnnHead, CnnHeadConfig};
pub use nn::Dropout;
pub use params::ParamStore;
pub use svm::{argmax, svm_predict, svm_train, LinearSvm, SvmOptions};

use crate::corpus::LabelVocabulary;
use crate::error::{read_json, write_json, Error, Result};
use crate::features::{
    encode_subwords, terms_with_ngrams, tokenize_basic, transform_tfidf, SparseVector, TfidfModel,
    TokenSequence, DEFAULT_MAX_LEN, MAX_SEQUENCE_LENGTH,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SvmTfidf,
    CnnText,
    TransformerCls,
    TransformerCnn,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::SvmTfidf,
        Architecture::CnnText,
        Architecture::TransformerCls,
        Architecture::TransformerCnn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::SvmTfidf => "svm_tfidf",
            Architecture::CnnText => "cnn_text",
            Architecture::TransformerCls => "transformer_cls",
            Architecture::TransformerCnn => "transformer_cnn",
        }
    }

    pub fn uses_encoder(self) -> bool {
        matches!(self, Architecture::TransformerCls | Architecture::TransformerCnn)
    }

    pub fn is_gradient_trained(self) -> bool {
        self != Architecture::SvmTfidf
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svm_tfidf" | "svm" => Ok(Architecture::SvmTfidf),
            "cnn_text" | "cnn" => Ok(Architecture::CnnText),
            "transformer_cls" => Ok(Architecture::TransformerCls),
            "transformer_cnn" => Ok(Architecture::TransformerCnn),
            other => Err(Error::invalid(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Model hyperparameters. Head input widths follow the encoder (or
/// embedding) dimension and are not configured here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub architecture: Architecture,
    pub cnn_filter_widths: Vec<usize>,
    pub cnn_maps_per_width: usize,
    pub dropout: f64,
    pub svm_c: f64,
    pub max_len: usize,
    /// Train only the head of transformer architectures.
    pub freeze_encoder: bool,
    /// Largest word n-gram in TF-IDF features.
    pub ngram_max: usize,
}

impl ClassifierConfig {
    pub fn new(architecture: Architecture) -> Self {
        let cnn = CnnHeadConfig::default();
        Self {
            architecture,
            cnn_filter_widths: cnn.filter_widths,
            cnn_maps_per_width: cnn.maps_per_width,
            dropout: 0.1,
            svm_c: 1.0,
            max_len: DEFAULT_MAX_LEN,
            freeze_encoder: false,
            ngram_max: 1,
        }
    }

    pub fn cnn(&self) -> CnnHeadConfig {
        CnnHeadConfig {
            filter_widths: self.cnn_filter_widths.clone(),
            maps_per_width: self.cnn_maps_per_width,
        }
    }

    /// Input width of the classification layer given an encoder hidden size:
    /// `H` for the `[CLS]` head, `widths × maps` for the CNN head.
    pub fn head_input_width(&self, hidden: usize) -> usize {
        match self.architecture {
            Architecture::TransformerCls => hidden,
            Architecture::TransformerCnn | Architecture::CnnText => self.cnn().pooled_dim(),
            Architecture::SvmTfidf => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.svm_c.is_nan() || self.svm_c <= 0.0 || !self.svm_c.is_finite() {
            return Err(Error::invalid(format!("svm C must be positive, got {}", self.svm_c)));
        }
        if self.max_len < 2 || self.max_len > MAX_SEQUENCE_LENGTH {
            return Err(Error::invalid(format!(
                "max_len must lie in [2, {MAX_SEQUENCE_LENGTH}], got {}",
                self.max_len
            )));
        }
        if self.ngram_max == 0 {
            return Err(Error::invalid("ngram_max must be at least 1"));
        }
        if matches!(self.architecture, Architecture::CnnText | Architecture::TransformerCnn) {
            self.cnn().validate()?;
            if self.architecture == Architecture::TransformerCnn && self.max_len < self.cnn().max_width() {
                return Err(Error::invalid(format!(
                    "max_len {} is below the largest filter width {}",
                    self.max_len,
                    self.cnn().max_width()
                )));
            }
        }
        Ok(())
    }
}

/// Architecture-specific model inputs for a list of texts.
#[derive(Debug, Clone)]
pub enum Inputs {
    Sparse(Vec<SparseVector>),
    Terms(Vec<Vec<u32>>),
    Sequences(Vec<TokenSequence>),
}

impl Inputs {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Sparse(v) => v.len(),
            Inputs::Terms(v) => v.len(),
            Inputs::Sequences(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub enum Parameters {
    Svm { tfidf: TfidfModel, svm: Option<LinearSvm> },
    CnnText(CnnTextModel),
    TransformerCls { encoder: EncoderAdapter, head: ClsHead },
    TransformerCnn { encoder: EncoderAdapter, head: CnnHead },
}

/// One prediction: label string, its index and the full probability row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub label: String,
    pub index: usize,
    pub probabilities: Vec<f64>,
}

/// Anything that maps sentences to label indices of a fixed vocabulary.
pub trait Classifier {
    fn label_vocab(&self) -> &LabelVocabulary;
    fn predict_indices(&self, texts: &[String]) -> Result<Vec<usize>>;
}

const INFERENCE_BATCH: usize = 64;
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    format_version: u32,
    toolkit_version: String,
    config: ClassifierConfig,
    seed: u64,
    encoder: Option<String>,
    trained: bool,
}

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    config: ClassifierConfig,
    labels: LabelVocabulary,
    seed: u64,
    params: Parameters,
    trained: bool,
}

impl ClassifierModel {
    /// Wraps freshly initialized parameters; the model counts as untrained
    /// until [`Self::mark_trained`].
    pub fn new(config: ClassifierConfig, labels: LabelVocabulary, seed: u64, params: Parameters) -> Result<Self> {
        config.validate()?;
        let k = labels.len();
        let (arch, head_k) = match &params {
            Parameters::Svm { svm, .. } => (Architecture::SvmTfidf, svm.as_ref().map(LinearSvm::n_classes)),
            Parameters::CnnText(m) => (Architecture::CnnText, Some(m.head().n_classes())),
            Parameters::TransformerCls { head, .. } => (Architecture::TransformerCls, Some(head.n_classes())),
            Parameters::TransformerCnn { head, .. } => (Architecture::TransformerCnn, Some(head.n_classes())),
        };
        if arch != config.architecture {
            return Err(Error::invalid(format!(
                "parameters are for {arch}, config says {}",
                config.architecture
            )));
        }
        if let Some(hk) = head_k {
            if hk != k {
                return Err(Error::Dimension(format!("head has {hk} classes, vocabulary {k}")));
            }
        }
        match &params {
            Parameters::TransformerCls { encoder, head } if head.input_dim() != encoder.hidden_dim() => {
                return Err(Error::Dimension("head width differs from encoder hidden size".into()));
            }
            Parameters::TransformerCnn { encoder, head } if head.input_dim() != encoder.hidden_dim() => {
                return Err(Error::Dimension("conv width differs from encoder hidden size".into()));
            }
            _ => {}
        }
        Ok(Self {
            config,
            labels,
            seed,
            params,
            trained: false,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn labels(&self) -> &LabelVocabulary {
        &self.labels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parameters(&self) -> &Parameters {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn encoder_name(&self) -> Option<&str> {
        match &self.params {
            Parameters::TransformerCls { encoder, .. } | Parameters::TransformerCnn { encoder, .. } => {
                Some(encoder.name())
            }
            _ => None,
        }
    }

    /// Independent copy (parameters do not alias).
    pub fn deep_clone(&self) -> Result<Self> {
        let params = match &self.params {
            Parameters::Svm { tfidf, svm } => Parameters::Svm { tfidf: tfidf.clone(), svm: svm.clone() },
            Parameters::CnnText(m) => Parameters::CnnText(m.deep_clone()?),
            Parameters::TransformerCls { encoder, head } => Parameters::TransformerCls {
                encoder: encoder.deep_clone()?,
                head: head.deep_clone()?,
            },
            Parameters::TransformerCnn { encoder, head } => Parameters::TransformerCnn {
                encoder: encoder.deep_clone()?,
                head: head.deep_clone()?,
            },
        };
        Ok(Self { params, ..self.clone() })
    }

    /// Gradient-trained parameters, in a fixed order. The encoder is left
    /// out when `freeze_encoder` is set.
    pub fn trainable_stores(&self) -> Vec<&ParamStore> {
        match &self.params {
            Parameters::Svm { .. } => vec![],
            Parameters::CnnText(m) => vec![m.embedding(), m.head().params()],
            Parameters::TransformerCls { encoder, head } => {
                let mut v = vec![head.params()];
                if !self.config.freeze_encoder {
                    v.push(encoder.params());
                }
                v
            }
            Parameters::TransformerCnn { encoder, head } => {
                let mut v = vec![head.params()];
                if !self.config.freeze_encoder {
                    v.push(encoder.params());
                }
                v
            }
        }
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.trainable_stores().into_iter().flat_map(ParamStore::vars).collect()
    }

    /// Tokenizes and vectorizes texts for this architecture.
    pub fn prepare<S: AsRef<str>>(&self, texts: &[S]) -> Result<Inputs> {
        match &self.params {
            Parameters::Svm { tfidf, .. } => Ok(Inputs::Sparse(
                texts
                    .iter()
                    .map(|t| transform_tfidf(tfidf, &terms_with_ngrams(t.as_ref(), self.config.ngram_max)))
                    .collect(),
            )),
            Parameters::CnnText(m) => Ok(Inputs::Terms(
                texts
                    .iter()
                    .map(|t| {
                        let ids = m.term_ids(&tokenize_basic(t.as_ref()));
                        // a sentence without terms is read as one unknown word
                        if ids.is_empty() { vec![OOV_ROW] } else { ids }
                    })
                    .collect(),
            )),
            Parameters::TransformerCls { encoder, .. } | Parameters::TransformerCnn { encoder, .. } => {
                let tok = encoder.tokenizer()?;
                Ok(Inputs::Sequences(
                    texts
                        .iter()
                        .map(|t| encode_subwords(t.as_ref(), tok, self.config.max_len))
                        .collect::<Result<_>>()?,
                ))
            }
        }
    }

    /// Probability rows `(|idx|, K)` for the selected prepared inputs.
    /// Dropout is active only when `drop` is given.
    pub fn forward(&self, inputs: &Inputs, idx: &[usize], drop: Option<&mut Dropout>) -> Result<Tensor> {
        if idx.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        match (&self.params, inputs) {
            (Parameters::Svm { svm, .. }, Inputs::Sparse(v)) => {
                let svm = svm.as_ref().ok_or(Error::Untrained)?;
                let mut rows = Vec::with_capacity(idx.len() * self.labels.len());
                for &i in idx {
                    rows.extend(svm.decision_values(&v[i])?);
                }
                let t = Tensor::from_vec(rows, (idx.len(), self.labels.len()), &Device::Cpu)?;
                nn::softmax_rows(&t)
            }
            (Parameters::CnnText(m), Inputs::Terms(v)) => {
                let docs: Vec<Vec<u32>> = idx.iter().map(|&i| v[i].clone()).collect();
                cnn_text_forward(m, &docs, drop)
            }
            (Parameters::TransformerCls { encoder, head }, Inputs::Sequences(v)) => {
                let batch: Vec<TokenSequence> = idx.iter().map(|&i| v[i].clone()).collect();
                transformer_cls_forward(encoder, &batch, head, drop)
            }
            (Parameters::TransformerCnn { encoder, head }, Inputs::Sequences(v)) => {
                let batch: Vec<TokenSequence> = idx.iter().map(|&i| v[i].clone()).collect();
                transformer_cnn_forward(encoder, &batch, head, drop)
            }
            _ => Err(Error::invalid("inputs were prepared for a different architecture")),
        }
    }

    /// Inference-mode probability rows for all prepared inputs.
    pub fn predict_proba_prepared(&self, inputs: &Inputs) -> Result<Vec<Vec<f64>>> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        let all: Vec<usize> = (0..inputs.len()).collect();
        let mut rows = Vec::with_capacity(inputs.len());
        for chunk in all.chunks(INFERENCE_BATCH) {
            rows.extend(self.forward(inputs, chunk, None)?.to_vec2::<f64>()?);
        }
        Ok(rows)
    }

    pub fn predict_proba<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<Vec<f64>>> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        self.predict_proba_prepared(&self.prepare(texts)?)
    }

    pub fn predict<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<Prediction>> {
        if texts.is_empty() {
            return Err(Error::invalid("nothing to predict"));
        }
        Ok(self
            .predict_proba(texts)?
            .into_iter()
            .map(|row| {
                let index = argmax(&row);
                Prediction {
                    label: self.labels.label(index).to_string(),
                    index,
                    probabilities: row,
                }
            })
            .collect())
    }

    /// Writes the model directory: `config.json`, `labels.txt` and
    /// architecture-specific parameter files.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = ModelMeta {
            format_version: FORMAT_VERSION,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config.clone(),
            seed: self.seed,
            encoder: self.encoder_name().map(str::to_string),
            trained: self.trained,
        };
        write_json(&dir.join("config.json"), &meta)?;
        self.labels.save(dir.join("labels.txt"))?;
        match &self.params {
            Parameters::Svm { tfidf, svm } => {
                tfidf.save(dir.join("tfidf.json"))?;
                if let Some(svm) = svm {
                    let mut p = ParamStore::new();
                    p.from_vec("weight", svm.weights().to_vec(), &[svm.n_classes(), svm.dim()])?;
                    p.from_vec("bias", svm.bias().to_vec(), &[svm.n_classes()])?;
                    p.save(&dir.join("svm.safetensors"))?;
                }
            }
            Parameters::CnnText(m) => {
                let mut words = m.words().join("\n");
                words.push('\n');
                let path = dir.join("words.txt");
                std::fs::write(&path, words).map_err(|e| Error::io(&path, e))?;
                m.embedding().save(&dir.join("embedding.safetensors"))?;
                m.head().params().save(&dir.join("head.safetensors"))?;
            }
            Parameters::TransformerCls { encoder, head } => {
                encoder.save_checkpoint(&dir.join("encoder"))?;
                head.params().save(&dir.join("head.safetensors"))?;
            }
            Parameters::TransformerCnn { encoder, head } => {
                encoder.save_checkpoint(&dir.join("encoder"))?;
                head.params().save(&dir.join("head.safetensors"))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: ModelMeta = read_json(&dir.join("config.json"))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format version {}",
                meta.format_version
            )));
        }
        let labels = LabelVocabulary::load(dir.join("labels.txt"))?;
        let cfg = meta.config;
        let params = match cfg.architecture {
            Architecture::SvmTfidf => {
                let tfidf = TfidfModel::load(dir.join("tfidf.json"))?;
                let path = dir.join("svm.safetensors");
                let svm = if path.exists() {
                    let p = ParamStore::load(&path)?;
                    Some(LinearSvm::from_parts(tfidf.dim(), p.values("weight")?, p.values("bias")?)?)
                } else {
                    None
                };
                Parameters::Svm { tfidf, svm }
            }
            Architecture::CnnText => {
                let path = dir.join("words.txt");
                let words = std::fs::read_to_string(&path)
                    .map_err(|e| Error::io(&path, e))?
                    .lines()
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect();
                let embedding = ParamStore::load(&dir.join("embedding.safetensors"))?;
                let head = CnnHead::from_params(cfg.cnn(), ParamStore::load(&dir.join("head.safetensors"))?)?;
                Parameters::CnnText(CnnTextModel::from_parts(words, embedding, head, cfg.max_len)?)
            }
            Architecture::TransformerCls => {
                let name = meta.encoder.clone().unwrap_or_else(|| "encoder".into());
                Parameters::TransformerCls {
                    encoder: EncoderAdapter::load_checkpoint(&name, &dir.join("encoder"))?,
                    head: ClsHead::from_params(ParamStore::load(&dir.join("head.safetensors"))?)?,
                }
            }
            Architecture::TransformerCnn => {
                let name = meta.encoder.clone().unwrap_or_else(|| "encoder".into());
                Parameters::TransformerCnn {
                    encoder: EncoderAdapter::load_checkpoint(&name, &dir.join("encoder"))?,
                    head: CnnHead::from_params(cfg.cnn(), ParamStore::load(&dir.join("head.safetensors"))?)?,
                }
            }
        };
        let mut model = Self::new(cfg, labels, meta.seed, params)?;
        model.trained = meta.trained;
        Ok(model)
    }
}

impl Classifier for ClassifierModel {
    fn label_vocab(&self) -> &LabelVocabulary {
        &self.labels
    }

    fn predict_indices(&self, texts: &[String]) -> Result<Vec<usize>> {
        Ok(self.predict(texts)?.into_iter().map(|p| p.index).collect())
    }
}
