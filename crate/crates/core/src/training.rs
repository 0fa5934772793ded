//! Mini-batch Adam fine-tuning with per-epoch dev evaluation and
//! best-epoch model selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_label_vocab, LabelVocabulary, LabeledExample};
use crate::error::{write_json, Error, Result};
use crate::evaluation::{confusion_matrix, macro_f1, per_class_prf};
use crate::features::{fit_tfidf, terms_with_ngrams, transform_tfidf, EmbeddingTable};
use crate::models::nn::cross_entropy;
use crate::models::{
    argmax, svm_train, Architecture, ClassifierConfig, ClassifierModel, ClsHead, CnnHead,
    CnnTextModel, Dropout, EncoderAdapter, Inputs, Parameters, SvmOptions,
};
pub use crate::seed::RngStreams;

/// Probabilities are clamped to this before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Fine-tuning rate for transformer architectures.
pub const TRANSFORMER_LEARNING_RATE: f64 = 2e-5;
pub const CNN_TEXT_LEARNING_RATE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    MacroF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// `None` picks the architecture default.
    pub learning_rate: Option<f64>,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub selection_metric: SelectionMetric,
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 20,
            learning_rate: None,
            optimizer: OptimizerKind::Adam,
            seed: 42,
            selection_metric: SelectionMetric::MacroF1,
            early_stop_patience: None,
        }
    }
}

impl TrainingConfig {
    pub fn learning_rate_for(&self, arch: Architecture) -> f64 {
        self.learning_rate.unwrap_or(match arch {
            Architecture::CnnText => CNN_TEXT_LEARNING_RATE,
            _ => TRANSFORMER_LEARNING_RATE,
        })
    }

    pub fn validate(&self, arch: Architecture) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        let lr = self.learning_rate_for(arch);
        if self.epochs > 0 && !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_macro_f1: f64,
    /// Excluded from the persisted trace and from equality so reruns
    /// compare bit-for-bit.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl PartialEq for EpochRecord {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.dev_macro_f1.to_bits() == other.dev_macro_f1.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainingTrace {
    pub fn dev_f1(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.dev_macro_f1).collect()
    }

    /// Tab-separated `epoch train_loss dev_macro_f1` lines, for plotting.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\ttrain_loss\tdev_macro_f1\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{}\t{:?}\t{:?}", e.epoch, e.train_loss, e.dev_macro_f1);
        }
        s
    }

    /// Writes `trace.json`, `trace.tsv` and the wall-clock side file `timings.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("trace.json"), self)?;
        let tsv = dir.join("trace.tsv");
        std::fs::write(&tsv, self.to_tsv()).map_err(|e| Error::io(&tsv, e))?;
        let timings: Vec<f64> = self.epochs.iter().map(|e| e.wall_seconds).collect();
        write_json(&dir.join("timings.json"), &serde_json::json!({ "epoch_wall_seconds": timings }))
    }
}

/// Mean of `−ln max(p[gold], 1e-12)` over rows.
pub fn compute_loss(rows: &[Vec<f64>], gold: &[usize]) -> Result<f64> {
    if rows.len() != gold.len() || rows.is_empty() {
        return Err(Error::Dimension(format!(
            "{} probability rows for {} gold labels",
            rows.len(),
            gold.len()
        )));
    }
    let mut total = 0.0;
    for (row, &g) in rows.iter().zip(gold) {
        let p = row.get(g).ok_or_else(|| {
            Error::invalid(format!("gold index {g} outside [0, {})", row.len()))
        })?;
        total -= p.max(PROB_FLOOR).ln();
    }
    Ok(total / rows.len() as f64)
}

/// Seeds every stochastic component of a run.
pub fn set_seed(seed: u64) -> RngStreams {
    RngStreams::new(seed)
}

/// Example order for one epoch; a function of (seed, epoch, n) only.
pub fn epoch_permutation(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut RngStreams::new(seed).stream(&format!("shuffle/{epoch}")));
    idx
}

/// Earliest epoch with maximal dev macro F1.
pub fn select_best_checkpoint(trace: &TrainingTrace) -> Result<usize> {
    if trace.epochs.is_empty() {
        return Err(Error::invalid("empty training trace"));
    }
    let f1 = trace.dev_f1();
    Ok(argmax(&f1))
}

/// What feeds the model besides raw text.
#[derive(Debug, Clone)]
pub enum FeatureInput {
    None,
    Encoder(EncoderAdapter),
    Embeddings(EmbeddingTable),
}

/// Freshly initialized (untrained) model for `config`.
pub fn initialize(
    config: &ClassifierConfig,
    labels: LabelVocabulary,
    train: &[LabeledExample],
    features: FeatureInput,
    seeds: &RngStreams,
) -> Result<ClassifierModel> {
    config.validate()?;
    let k = labels.len();
    let params = match (config.architecture, features) {
        (Architecture::SvmTfidf, _) => {
            let docs: Vec<Vec<String>> = train
                .iter()
                .map(|e| terms_with_ngrams(&e.text, config.ngram_max))
                .collect();
            Parameters::Svm { tfidf: fit_tfidf(&docs)?, svm: None }
        }
        (Architecture::CnnText, FeatureInput::Embeddings(table)) => {
            Parameters::CnnText(CnnTextModel::new(&table, config.cnn(), k, config.max_len, seeds)?)
        }
        (Architecture::TransformerCls, FeatureInput::Encoder(encoder)) => {
            let head = ClsHead::new(encoder.hidden_dim(), k, seeds)?;
            Parameters::TransformerCls { encoder, head }
        }
        (Architecture::TransformerCnn, FeatureInput::Encoder(encoder)) => {
            let head = CnnHead::new(config.cnn(), encoder.hidden_dim(), k, seeds)?;
            Parameters::TransformerCnn { encoder, head }
        }
        (Architecture::CnnText, _) => {
            return Err(Error::invalid("cnn_text needs pretrained word embeddings"));
        }
        (arch, _) => return Err(Error::invalid(format!("{arch} needs an encoder"))),
    };
    ClassifierModel::new(config.clone(), labels, seeds.seed(), params)
}

/// Builds the vocabulary over train ∪ dev, initializes and trains a model.
/// An empty dev set falls back to selecting on the training set.
pub fn train(
    train_set: &[LabeledExample],
    dev_set: &[LabeledExample],
    config: &ClassifierConfig,
    training: &TrainingConfig,
    features: FeatureInput,
) -> Result<(ClassifierModel, TrainingTrace)> {
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let all: Vec<LabeledExample> = train_set.iter().chain(dev_set).cloned().collect();
    let labels = build_label_vocab(&all)?;
    if labels.len() < 2 {
        return Err(Error::invalid(format!(
            "training needs at least 2 labels, found {}",
            labels.len()
        )));
    }
    training.validate(config.architecture)?;
    let seeds = set_seed(training.seed);
    let model = initialize(config, labels, train_set, features, &seeds)?;
    fit(model, train_set, dev_set, training)
}

fn macro_f1_of(labels: &LabelVocabulary, gold: &[usize], pred: &[usize]) -> Result<f64> {
    let cm = confusion_matrix(gold, pred, labels.len())?;
    let f1: Vec<f64> = per_class_prf(&cm).iter().map(|s| s.f1).collect();
    macro_f1(&f1)
}

fn predict_prepared(model: &ClassifierModel, inputs: &Inputs) -> Result<Vec<usize>> {
    Ok(model
        .predict_proba_prepared(inputs)?
        .iter()
        .map(|r| argmax(r))
        .collect())
}

/// Trains an initialized model in place and returns it with its trace.
pub fn fit(
    mut model: ClassifierModel,
    train_set: &[LabeledExample],
    dev_set: &[LabeledExample],
    training: &TrainingConfig,
) -> Result<(ClassifierModel, TrainingTrace)> {
    let arch = model.architecture();
    training.validate(arch)?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    // Batches depend only on (seed, epoch, N) and the content of the set,
    // never on the order of lines in the training file.
    let mut canonical = train_set.to_vec();
    canonical.sort_by(|a, b| (&a.text, &a.label).cmp(&(&b.text, &b.label)));
    let train_set = canonical.as_slice();
    let dev_set = if dev_set.is_empty() { train_set } else { dev_set };
    let labels = model.labels().clone();
    let gold = labels.encode(train_set.iter().map(|e| e.label.as_str()))?;
    let dev_gold = labels.encode(dev_set.iter().map(|e| e.label.as_str()))?;
    let mut trace = TrainingTrace {
        seed: training.seed,
        ..Default::default()
    };

    if arch == Architecture::SvmTfidf {
        let start = Instant::now();
        let opts = SvmOptions {
            c: model.config().svm_c,
            seed: training.seed,
            ..SvmOptions::default()
        };
        let ngram = model.config().ngram_max;
        let Parameters::Svm { tfidf, svm } = model.parameters_mut() else {
            unreachable!("architecture checked above");
        };
        let vectors: Vec<_> = train_set
            .iter()
            .map(|e| transform_tfidf(tfidf, &terms_with_ngrams(&e.text, ngram)))
            .collect();
        *svm = Some(svm_train(&vectors, &gold, labels.len(), &opts)?);
        model.mark_trained();
        let train_rows = model.predict_proba_prepared(&model.prepare(&texts(train_set))?)?;
        let dev_pred = predict_prepared(&model, &model.prepare(&texts(dev_set))?)?;
        trace.epochs.push(EpochRecord {
            epoch: 0,
            train_loss: compute_loss(&train_rows, &gold)?,
            dev_macro_f1: macro_f1_of(&labels, &dev_gold, &dev_pred)?,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        trace.best_epoch = Some(0);
        return Ok((model, trace));
    }

    let seeds = set_seed(training.seed);
    let inputs = model.prepare(&texts(train_set))?;
    let dev_inputs = model.prepare(&texts(dev_set))?;
    let mut optimizer = AdamW::new(
        model.trainable_vars(),
        ParamsAdamW {
            lr: training.learning_rate_for(arch),
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            weight_decay: 0.0,
        },
    )?;
    let mut dropout = Dropout::new(model.config().dropout, seeds.stream("dropout"));
    let mut best: Option<(f64, Vec<BTreeMap<String, Tensor>>)> = None;
    model.mark_trained();

    for epoch in 0..training.epochs {
        let start = Instant::now();
        let order = epoch_permutation(training.seed, epoch, train_set.len());
        let mut loss_sum = 0.0;
        for chunk in order.chunks(training.batch_size) {
            let probs = model.forward(&inputs, chunk, Some(&mut dropout))?;
            let batch_gold: Vec<usize> = chunk.iter().map(|&i| gold[i]).collect();
            let loss = cross_entropy(&probs, &batch_gold)?;
            optimizer.backward_step(&loss)?;
            loss_sum += loss.to_scalar::<f64>()? * chunk.len() as f64;
        }
        let dev_pred = predict_prepared(&model, &dev_inputs)?;
        let f1 = macro_f1_of(&labels, &dev_gold, &dev_pred)?;
        trace.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            dev_macro_f1: f1,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        log::info!(
            "epoch {epoch}: train loss {:.5}, dev macro F1 {:.4}",
            loss_sum / train_set.len() as f64,
            f1
        );
        if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
            let snap = model
                .trainable_stores()
                .iter()
                .map(|s| s.snapshot())
                .collect::<Result<_>>()?;
            best = Some((f1, snap));
        }
        if let Some(patience) = training.early_stop_patience {
            let best_epoch = select_best_checkpoint(&trace)?;
            if epoch - best_epoch >= patience {
                break;
            }
        }
    }
    if let Some((_, snap)) = &best {
        for (store, s) in model.trainable_stores().iter().zip(snap) {
            store.restore(s)?;
        }
        trace.best_epoch = Some(select_best_checkpoint(&trace)?);
    }
    Ok((model, trace))
}

fn texts(examples: &[LabeledExample]) -> Vec<&str> {
    examples.iter().map(|e| e.text.as_str()).collect()
}
