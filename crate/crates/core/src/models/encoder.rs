//! Transformer encoder adapter.
//!
//! The encoder is a BERT-style post-LayerNorm stack whose parameter names
//! and `config.json` fields follow the HuggingFace layout, so a local
//! `bert-base-multilingual-cased` or `xlm-roberta-base` safetensors export
//! loads directly. Test-scale encoders (`test-tiny-h16`, `test-tiny-h32`)
//! share the same code path with seeded random weights and a WordPiece
//! vocabulary built from training text, so nothing is downloaded.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, IndexOp, Tensor};
use serde::{Deserialize, Serialize};

use super::nn::{dropout, layer_norm, linear, softmax_rows, Dropout};
use super::params::ParamStore;
use crate::error::{read_json, write_json, Error, Result};
use crate::features::{SubwordTokenizer, TokenSequence, WordPiece};
use crate::seed::RngStreams;

/// Environment variable naming the directory that holds pretrained checkpoints.
pub const CACHE_DIR_ENV: &str = "TECHDOM_CACHE_DIR";

const TINY_VOCAB_LIMIT: usize = 8000;
const INIT_STD: f64 = 0.02;
// Added to attention scores of padding keys; exp underflows to exactly 0.
const MASK_PENALTY: f64 = 1e9;

fn default_type_vocab() -> usize {
    2
}
fn default_eps() -> f64 {
    1e-12
}
fn default_max_pos() -> usize {
    512
}
fn default_model_type() -> String {
    "bert".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    #[serde(default = "default_model_type")]
    pub model_type: String,
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    #[serde(default = "default_max_pos")]
    pub max_position_embeddings: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    #[serde(default)]
    pub pad_token_id: u32,
}

impl EncoderConfig {
    pub fn tiny(hidden: usize, vocab_size: usize) -> Self {
        Self {
            model_type: "bert".into(),
            vocab_size,
            hidden_size: hidden,
            num_hidden_layers: 2,
            num_attention_heads: 2,
            intermediate_size: 4 * hidden,
            max_position_embeddings: 512,
            type_vocab_size: 2,
            layer_norm_eps: 1e-12,
            pad_token_id: 0,
        }
    }

    pub fn bert_base_multilingual_cased() -> Self {
        Self {
            model_type: "bert".into(),
            vocab_size: 119_547,
            hidden_size: 768,
            num_hidden_layers: 12,
            num_attention_heads: 12,
            intermediate_size: 3072,
            max_position_embeddings: 512,
            type_vocab_size: 2,
            layer_norm_eps: 1e-12,
            pad_token_id: 0,
        }
    }

    pub fn xlm_roberta_base() -> Self {
        Self {
            model_type: "xlm-roberta".into(),
            vocab_size: 250_002,
            hidden_size: 768,
            num_hidden_layers: 12,
            num_attention_heads: 12,
            intermediate_size: 3072,
            max_position_embeddings: 514,
            type_vocab_size: 1,
            layer_norm_eps: 1e-5,
            pad_token_id: 1,
        }
    }

    /// RoBERTa-family models start positions after the padding index.
    pub fn position_offset(&self) -> usize {
        if self.model_type.contains("roberta") {
            self.pad_token_id as usize + 1
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.num_attention_heads == 0 {
            return Err(Error::Encoder("hidden size and head count must be positive".into()));
        }
        if !self.hidden_size.is_multiple_of(self.num_attention_heads) {
            return Err(Error::Encoder(format!(
                "hidden size {} is not divisible by {} attention heads",
                self.hidden_size, self.num_attention_heads
            )));
        }
        if self.type_vocab_size == 0 || self.vocab_size == 0 {
            return Err(Error::Encoder("empty embedding table in config".into()));
        }
        Ok(())
    }
}

/// Where an `--encoder` argument points.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderSource {
    /// Seeded random encoder of the given width; vocabulary comes from training text.
    Tiny { name: String, hidden: usize },
    /// Directory with `config.json`, `model.safetensors` and a tokenizer file.
    Checkpoint { name: String, dir: PathBuf },
}

pub const REGISTERED_ENCODERS: [&str; 4] = [
    "test-tiny-h16",
    "test-tiny-h32",
    "bert-base-multilingual-cased",
    "xlm-roberta-base",
];

/// Architecture config of a registered checkpoint, available without weights.
pub fn registered_config(name: &str) -> Option<EncoderConfig> {
    match name {
        "test-tiny-h16" => Some(EncoderConfig::tiny(16, TINY_VOCAB_LIMIT)),
        "test-tiny-h32" => Some(EncoderConfig::tiny(32, TINY_VOCAB_LIMIT)),
        "bert-base-multilingual-cased" => Some(EncoderConfig::bert_base_multilingual_cased()),
        "xlm-roberta-base" => Some(EncoderConfig::xlm_roberta_base()),
        _ => None,
    }
}

pub fn cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_DIR_ENV) {
        return PathBuf::from(dir);
    }
    let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_default();
    home.join(".cache").join("techdom")
}

impl EncoderSource {
    /// Resolves a registered name or a local checkpoint path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "test-tiny-h16" => {
                return Ok(Self::Tiny { name: name_or_path.into(), hidden: 16 });
            }
            "test-tiny-h32" => {
                return Ok(Self::Tiny { name: name_or_path.into(), hidden: 32 });
            }
            _ => {}
        }
        let path = Path::new(name_or_path);
        if path.is_dir() {
            return Ok(Self::Checkpoint {
                name: path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| name_or_path.to_string()),
                dir: path.to_path_buf(),
            });
        }
        if registered_config(name_or_path).is_some() {
            let dir = cache_dir().join(name_or_path);
            if dir.is_dir() {
                return Ok(Self::Checkpoint { name: name_or_path.into(), dir });
            }
            return Err(Error::Encoder(format!(
                "checkpoint {name_or_path} not found under {} (set {CACHE_DIR_ENV}); \
                 weights are never downloaded",
                dir.display()
            )));
        }
        Err(Error::Encoder(format!(
            "unknown encoder {name_or_path:?}: not a registered name ({}) or a directory",
            REGISTERED_ENCODERS.join(", ")
        )))
    }
}

/// Per-position final-layer states of one padded batch.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `(B, L, H)`
    pub token_states: Tensor,
    /// `(B, H)`; row 0 of each sequence's token states.
    pub cls_state: Tensor,
    /// `(B, L)`, 1.0 for real tokens.
    pub mask: Tensor,
}

/// A transformer encoder with its tokenizer and trainable parameters.
#[derive(Debug, Clone)]
pub struct EncoderAdapter {
    name: String,
    config: EncoderConfig,
    params: ParamStore,
    tokenizer: Option<SubwordTokenizer>,
}

fn lin_names(prefix: &str) -> [String; 2] {
    [format!("{prefix}.weight"), format!("{prefix}.bias")]
}

impl EncoderAdapter {
    /// Seeded random encoder; parameters follow BERT's initialization
    /// (normal 0.02, unit LayerNorm, zero biases).
    pub fn random(name: &str, config: EncoderConfig, tokenizer: Option<SubwordTokenizer>, seeds: &RngStreams) -> Result<Self> {
        config.validate()?;
        let mut rng = seeds.stream("init/encoder");
        let mut p = ParamStore::new();
        let h = config.hidden_size;
        p.normal("embeddings.word_embeddings.weight", &[config.vocab_size, h], INIT_STD, &mut rng)?;
        p.normal(
            "embeddings.position_embeddings.weight",
            &[config.max_position_embeddings, h],
            INIT_STD,
            &mut rng,
        )?;
        p.normal(
            "embeddings.token_type_embeddings.weight",
            &[config.type_vocab_size, h],
            INIT_STD,
            &mut rng,
        )?;
        let ln = |p: &mut ParamStore, prefix: &str| -> Result<()> {
            p.constant(&format!("{prefix}.weight"), &[h], 1.0)?;
            p.constant(&format!("{prefix}.bias"), &[h], 0.0)
        };
        ln(&mut p, "embeddings.LayerNorm")?;
        for l in 0..config.num_hidden_layers {
            let base = format!("encoder.layer.{l}");
            let dense = |p: &mut ParamStore, rng: &mut _, prefix: String, out: usize, inp: usize| -> Result<()> {
                let [w, b] = lin_names(&prefix);
                p.normal(&w, &[out, inp], INIT_STD, rng)?;
                p.constant(&b, &[out], 0.0)
            };
            for part in ["query", "key", "value"] {
                dense(&mut p, &mut rng, format!("{base}.attention.self.{part}"), h, h)?;
            }
            dense(&mut p, &mut rng, format!("{base}.attention.output.dense"), h, h)?;
            ln(&mut p, &format!("{base}.attention.output.LayerNorm"))?;
            dense(&mut p, &mut rng, format!("{base}.intermediate.dense"), config.intermediate_size, h)?;
            dense(&mut p, &mut rng, format!("{base}.output.dense"), h, config.intermediate_size)?;
            ln(&mut p, &format!("{base}.output.LayerNorm"))?;
        }
        Ok(Self {
            name: name.to_string(),
            config,
            params: p,
            tokenizer,
        })
    }

    /// Test-scale encoder of width `hidden` with a WordPiece vocabulary built from `texts`.
    pub fn tiny_from_corpus<S: AsRef<str>>(name: &str, hidden: usize, texts: &[S], seeds: &RngStreams) -> Result<Self> {
        let wp = WordPiece::from_corpus(texts, TINY_VOCAB_LIMIT, true)?;
        let config = EncoderConfig::tiny(hidden, wp.vocab_size());
        let tok = SubwordTokenizer::from_wordpiece(wp)?;
        Self::random(name, config, Some(tok), seeds)
    }

    /// Builds the encoder named by `source`; tiny encoders take their vocabulary from `texts`.
    pub fn from_source<S: AsRef<str>>(source: &EncoderSource, texts: &[S], seeds: &RngStreams) -> Result<Self> {
        match source {
            EncoderSource::Tiny { name, hidden } => Self::tiny_from_corpus(name, *hidden, texts, seeds),
            EncoderSource::Checkpoint { name, dir } => Self::load_checkpoint(name, dir),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_size
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn tokenizer(&self) -> Result<&SubwordTokenizer> {
        self.tokenizer
            .as_ref()
            .ok_or_else(|| Error::Encoder(format!("encoder {} has no tokenizer loaded", self.name)))
    }

    pub fn with_tokenizer(mut self, tokenizer: SubwordTokenizer) -> Self {
        self.tokenizer = Some(tokenizer);
        self
    }

    /// Copy with independent parameter storage.
    pub fn deep_clone(&self) -> Result<Self> {
        Ok(Self {
            name: self.name.clone(),
            config: self.config.clone(),
            params: self.params.deep_clone()?,
            tokenizer: self.tokenizer.clone(),
        })
    }

    /// Stacks sequences into `(B, L)` id and mask tensors, dropping trailing
    /// columns that are padding in every row (but keeping at least `min_len`).
    pub fn batch_tensors(batch: &[TokenSequence], min_len: usize) -> Result<(Tensor, Tensor)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let full = batch[0].len();
        if batch.iter().any(|s| s.len() != full || s.mask.len() != full) {
            return Err(Error::Dimension("sequences in a batch must share one padded length".into()));
        }
        let longest = batch.iter().map(TokenSequence::real_len).max().unwrap_or(0);
        let len = longest.max(min_len).min(full);
        let mut ids = Vec::with_capacity(batch.len() * len);
        let mut mask = Vec::with_capacity(batch.len() * len);
        for s in batch {
            ids.extend_from_slice(&s.ids[..len]);
            mask.extend(s.mask[..len].iter().map(|&m| f64::from(m)));
        }
        Ok((
            Tensor::from_vec(ids, (batch.len(), len), &Device::Cpu)?,
            Tensor::from_vec(mask, (batch.len(), len), &Device::Cpu)?,
        ))
    }

    /// Encodes a batch. Dropout is applied only when `drop` is given.
    pub fn forward(&self, ids: &Tensor, mask: &Tensor, mut drop: Option<&mut Dropout>) -> Result<EncoderOutput> {
        let cfg = &self.config;
        let (b, l) = ids.dims2()?;
        if l == 0 {
            return Err(Error::invalid("empty sequence"));
        }
        if l + cfg.position_offset() > cfg.max_position_embeddings {
            return Err(Error::Dimension(format!(
                "sequence length {l} exceeds {} positions",
                cfg.max_position_embeddings
            )));
        }
        let h = cfg.hidden_size;
        let p = &self.params;
        let word = p
            .get("embeddings.word_embeddings.weight")?
            .embedding(&ids.flatten_all()?)?
            .reshape((b, l, h))?;
        let offset = cfg.position_offset() as u32;
        let pos_ids = Tensor::arange(offset, offset + l as u32, &Device::Cpu)?;
        let pos = p.get("embeddings.position_embeddings.weight")?.embedding(&pos_ids)?;
        let tok_type = p.get("embeddings.token_type_embeddings.weight")?.i(0)?;
        let x = word.broadcast_add(&pos)?.broadcast_add(&tok_type)?;
        let mut x = layer_norm(
            &x,
            p.get("embeddings.LayerNorm.weight")?,
            p.get("embeddings.LayerNorm.bias")?,
            cfg.layer_norm_eps,
        )?;
        x = dropout(&x, drop.as_deref_mut())?;

        let n_heads = cfg.num_attention_heads;
        let head_dim = h / n_heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let attn_bias = ((mask.to_dtype(DType::F64)? - 1.0)? * MASK_PENALTY)?
            .reshape((b, 1, 1, l))?;
        for layer in 0..cfg.num_hidden_layers {
            let base = format!("encoder.layer.{layer}");
            let proj = |part: &str| -> Result<Tensor> {
                let [w, bias] = lin_names(&format!("{base}.attention.self.{part}"));
                let y = linear(&x, p.get(&w)?, p.get(&bias)?)?;
                Ok(y.reshape((b, l, n_heads, head_dim))?.transpose(1, 2)?.contiguous()?)
            };
            let q = proj("query")?;
            let k = proj("key")?;
            let v = proj("value")?;
            let scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?.broadcast_add(&attn_bias)?;
            let probs = softmax_rows(&scores)?;
            let ctx = probs
                .matmul(&v)?
                .transpose(1, 2)?
                .contiguous()?
                .reshape((b, l, h))?;
            let [w, bias] = lin_names(&format!("{base}.attention.output.dense"));
            let attn_out = dropout(&linear(&ctx, p.get(&w)?, p.get(&bias)?)?, drop.as_deref_mut())?;
            let [g, beta] = lin_names(&format!("{base}.attention.output.LayerNorm"));
            x = layer_norm(&(attn_out + &x)?, p.get(&g)?, p.get(&beta)?, cfg.layer_norm_eps)?;

            let [w, bias] = lin_names(&format!("{base}.intermediate.dense"));
            let inter = linear(&x, p.get(&w)?, p.get(&bias)?)?.gelu_erf()?;
            let [w, bias] = lin_names(&format!("{base}.output.dense"));
            let out = dropout(&linear(&inter, p.get(&w)?, p.get(&bias)?)?, drop.as_deref_mut())?;
            let [g, beta] = lin_names(&format!("{base}.output.LayerNorm"));
            x = layer_norm(&(out + &x)?, p.get(&g)?, p.get(&beta)?, cfg.layer_norm_eps)?;
        }
        let cls_state = x.i((.., 0, ..))?.contiguous()?;
        Ok(EncoderOutput {
            token_states: x,
            cls_state,
            mask: mask.to_dtype(DType::F64)?,
        })
    }

    /// Convenience wrapper over [`Self::batch_tensors`] and [`Self::forward`].
    pub fn encode(&self, batch: &[TokenSequence], min_len: usize, drop: Option<&mut Dropout>) -> Result<EncoderOutput> {
        let (ids, mask) = Self::batch_tensors(batch, min_len)?;
        self.forward(&ids, &mask, drop)
    }

    /// Writes a HuggingFace-layout checkpoint directory (`config.json`,
    /// `model.safetensors`, and `vocab.txt` or `tokenizer.json`).
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("config.json"), &self.config)?;
        self.params.save(&dir.join("model.safetensors"))?;
        let tok = self.tokenizer()?;
        if let Some(wp) = tok.as_wordpiece() {
            wp.save_vocab(&dir.join("vocab.txt"))?;
            write_json(
                &dir.join("tokenizer_config.json"),
                &serde_json::json!({ "do_lower_case": wp.lowercase() }),
            )?;
        } else if let Some(t) = tok.as_pretrained() {
            let path = dir.join("tokenizer.json");
            t.save(&path, false)
                .map_err(|e| Error::Tokenizer(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }

    /// Loads a checkpoint directory. Tensor names may carry a `bert.` or
    /// `roberta.` prefix and legacy `gamma`/`beta` LayerNorm names; pooler and
    /// task heads are ignored. Weights are converted to f64.
    pub fn load_checkpoint(name: &str, dir: &Path) -> Result<Self> {
        let config: EncoderConfig = read_json(&dir.join("config.json"))?;
        config.validate()?;
        let tokenizer = load_tokenizer(dir)?;
        let raw = candle_core::safetensors::load(dir.join("model.safetensors"), &Device::Cpu)
            .map_err(|e| Error::Encoder(format!("{}: {e}", dir.display())))?;
        let template = Self::random(name, config.clone(), None, &RngStreams::new(0))?;
        let mut params = ParamStore::new();
        for (key, tensor) in raw {
            let mut k = key
                .strip_prefix("bert.")
                .or_else(|| key.strip_prefix("roberta."))
                .unwrap_or(&key)
                .to_string();
            if let Some(stem) = k.strip_suffix(".gamma") {
                k = format!("{stem}.weight");
            } else if let Some(stem) = k.strip_suffix(".beta") {
                k = format!("{stem}.bias");
            }
            if let Ok(expected) = template.params.get(&k) {
                if expected.dims() != tensor.dims() {
                    return Err(Error::Encoder(format!(
                        "{k}: checkpoint shape {:?}, config implies {:?}",
                        tensor.dims(),
                        expected.dims()
                    )));
                }
                params.insert(k, &tensor)?;
            }
        }
        if let Some(missing) = template.params.names().find(|n| params.var(n).is_none()) {
            return Err(Error::Encoder(format!("{}: checkpoint lacks {missing}", dir.display())));
        }
        Ok(Self {
            name: name.to_string(),
            config,
            params,
            tokenizer: Some(tokenizer),
        })
    }
}

fn load_tokenizer(dir: &Path) -> Result<SubwordTokenizer> {
    let vocab = dir.join("vocab.txt");
    if vocab.exists() {
        let lowercase = dir
            .join("tokenizer_config.json")
            .exists()
            .then(|| read_json::<serde_json::Value>(&dir.join("tokenizer_config.json")))
            .transpose()?
            .and_then(|v| v.get("do_lower_case").and_then(serde_json::Value::as_bool))
            .unwrap_or(false);
        return SubwordTokenizer::from_wordpiece(WordPiece::from_vocab_file(&vocab, lowercase)?);
    }
    let json = dir.join("tokenizer.json");
    if json.exists() {
        return SubwordTokenizer::from_tokenizer_json(&json);
    }
    Err(Error::Encoder(format!(
        "{}: no vocab.txt or tokenizer.json",
        dir.display()
    )))
}

/// Max over the hidden axis; used only to sanity-check shapes in tests.
#[cfg(test)]
fn max_abs(t: &Tensor) -> f64 {
    t.abs().unwrap().flatten_all().unwrap().max(candle_core::D::Minus1).unwrap().to_scalar::<f64>().unwrap()
}
