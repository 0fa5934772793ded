//! Classification heads over encoder states and the two transformer
//! architectures built from them.

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::encoder::EncoderAdapter;
use super::nn::{dropout, linear, softmax_rows, Dropout};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::features::TokenSequence;
use crate::seed::RngStreams;

/// Linear layer `K × H` applied to the classification-position state.
#[derive(Debug, Clone)]
pub struct ClsHead {
    params: ParamStore,
    input_dim: usize,
    n_classes: usize,
}

impl ClsHead {
    pub fn new(input_dim: usize, n_classes: usize, seeds: &RngStreams) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = seeds.stream("init/head");
        params.normal("classifier.weight", &[n_classes, input_dim], 0.02, &mut rng)?;
        params.constant("classifier.bias", &[n_classes], 0.0)?;
        Ok(Self { params, input_dim, n_classes })
    }

    pub fn from_params(params: ParamStore) -> Result<Self> {
        let dims = params.get("classifier.weight")?.dims().to_vec();
        let [n_classes, input_dim] = dims[..] else {
            return Err(Error::Dimension("classifier.weight must be 2-D".into()));
        };
        Ok(Self { params, input_dim, n_classes })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn deep_clone(&self) -> Result<Self> {
        Self::from_params(self.params.deep_clone()?)
    }

    pub fn logits(&self, cls_state: &Tensor, drop: Option<&mut Dropout>) -> Result<Tensor> {
        let (_, h) = cls_state.dims2()?;
        if h != self.input_dim {
            return Err(Error::Dimension(format!(
                "head expects width {}, encoder state has {h}",
                self.input_dim
            )));
        }
        let x = dropout(cls_state, drop)?;
        linear(&x, self.params.get("classifier.weight")?, self.params.get("classifier.bias")?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnHeadConfig {
    pub filter_widths: Vec<usize>,
    pub maps_per_width: usize,
}

impl Default for CnnHeadConfig {
    fn default() -> Self {
        Self {
            filter_widths: vec![3, 4, 5],
            maps_per_width: 100,
        }
    }
}

impl CnnHeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filter_widths.is_empty() || self.maps_per_width == 0 {
            return Err(Error::invalid("cnn head needs at least one filter width and one map"));
        }
        let mut w = self.filter_widths.clone();
        w.sort_unstable();
        w.dedup();
        if w.len() != self.filter_widths.len() || w[0] == 0 {
            return Err(Error::invalid(format!(
                "filter widths must be distinct and positive: {:?}",
                self.filter_widths
            )));
        }
        Ok(())
    }

    /// Width of the pooled feature vector.
    pub fn pooled_dim(&self) -> usize {
        self.filter_widths.len() * self.maps_per_width
    }

    pub fn max_width(&self) -> usize {
        self.filter_widths.iter().copied().max().unwrap_or(1)
    }
}

/// 1-D convolutions with ReLU, masked max-over-time pooling, dropout and a
/// linear softmax layer.
#[derive(Debug, Clone)]
pub struct CnnHead {
    config: CnnHeadConfig,
    params: ParamStore,
    input_dim: usize,
    n_classes: usize,
}

fn conv_names(width: usize) -> (String, String) {
    (format!("conv.{width}.weight"), format!("conv.{width}.bias"))
}

impl CnnHead {
    /// Uniform `±1/√fan_in` initialization for every layer.
    pub fn new(config: CnnHeadConfig, input_dim: usize, n_classes: usize, seeds: &RngStreams) -> Result<Self> {
        config.validate()?;
        let mut rng = seeds.stream("init/cnn-head");
        let mut params = ParamStore::new();
        for &w in &config.filter_widths {
            let fan_in = w * input_dim;
            let bound = 1.0 / (fan_in as f64).sqrt();
            let (wn, bn) = conv_names(w);
            params.uniform(&wn, &[config.maps_per_width, fan_in], bound, &mut rng)?;
            params.uniform(&bn, &[config.maps_per_width], bound, &mut rng)?;
        }
        let f = config.pooled_dim();
        let bound = 1.0 / (f as f64).sqrt();
        params.uniform("out.weight", &[n_classes, f], bound, &mut rng)?;
        params.uniform("out.bias", &[n_classes], bound, &mut rng)?;
        Ok(Self { config, params, input_dim, n_classes })
    }

    pub fn from_params(config: CnnHeadConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let dims = params.get("out.weight")?.dims().to_vec();
        let n_classes = dims[0];
        let (wn, _) = conv_names(config.filter_widths[0]);
        let conv = params.get(&wn)?.dims().to_vec();
        let input_dim = conv[1] / config.filter_widths[0];
        Ok(Self { config, params, input_dim, n_classes })
    }

    pub fn config(&self) -> &CnnHeadConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn deep_clone(&self) -> Result<Self> {
        Self::from_params(self.config.clone(), self.params.deep_clone()?)
    }

    /// Pooled features `(B, widths × maps)` of `states (B, L, D)`.
    ///
    /// Padding rows are zeroed first. A window counts only if it lies within
    /// the real tokens; a sequence shorter than the filter keeps its single
    /// window at position 0, which then covers zero padding.
    pub fn pooled(&self, states: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, l, d) = states.dims3()?;
        if d != self.input_dim {
            return Err(Error::Dimension(format!(
                "cnn head expects input width {}, got {d}",
                self.input_dim
            )));
        }
        let max_w = self.config.max_width();
        if l < max_w {
            return Err(Error::Dimension(format!(
                "sequence length {l} is below the largest filter width {max_w}; \
                 pad inputs to at least {max_w} positions"
            )));
        }
        let real: Vec<usize> = mask
            .to_vec2::<f64>()?
            .iter()
            .map(|row| row.iter().filter(|&&m| m > 0.5).count())
            .collect();
        let x = states.broadcast_mul(&mask.unsqueeze(2)?)?;
        let mut pooled = Vec::with_capacity(self.config.filter_widths.len());
        for &w in &self.config.filter_widths {
            let t = l - w + 1;
            let windows: Vec<Tensor> = (0..w).map(|j| x.narrow(1, j, t)).collect::<candle_core::Result<_>>()?;
            let windows = Tensor::cat(&windows, 2)?;
            let (wn, bn) = conv_names(w);
            let conv = linear(&windows, self.params.get(&wn)?, self.params.get(&bn)?)?.relu()?;
            let mut valid = vec![0f64; b * t];
            for (row, &n) in real.iter().enumerate() {
                let count = if n >= w { n - w + 1 } else { 1 };
                for v in &mut valid[row * t..row * t + count.min(t)] {
                    *v = 1.0;
                }
            }
            let valid = Tensor::from_vec(valid, (b, t, 1), &Device::Cpu)?;
            // ReLU outputs are ≥ 0, so zeroing invalid windows leaves the max over valid ones.
            pooled.push(conv.broadcast_mul(&valid)?.max(1)?);
        }
        Ok(Tensor::cat(&pooled, 1)?)
    }

    pub fn logits(&self, states: &Tensor, mask: &Tensor, drop: Option<&mut Dropout>) -> Result<Tensor> {
        let feats = dropout(&self.pooled(states, mask)?, drop)?;
        linear(&feats, self.params.get("out.weight")?, self.params.get("out.bias")?)
    }
}

/// `softmax(head · cls_state)` over an encoded batch.
pub fn transformer_cls_forward(
    adapter: &EncoderAdapter,
    batch: &[TokenSequence],
    head: &ClsHead,
    mut drop: Option<&mut Dropout>,
) -> Result<Tensor> {
    if head.input_dim() != adapter.hidden_dim() {
        return Err(Error::Dimension(format!(
            "head input width {} differs from encoder hidden size {}",
            head.input_dim(),
            adapter.hidden_dim()
        )));
    }
    let out = adapter.encode(batch, 1, drop.as_deref_mut())?;
    softmax_rows(&head.logits(&out.cls_state, drop)?)
}

/// CNN head over the full matrix of final-layer token states.
pub fn transformer_cnn_forward(
    adapter: &EncoderAdapter,
    batch: &[TokenSequence],
    head: &CnnHead,
    mut drop: Option<&mut Dropout>,
) -> Result<Tensor> {
    if head.input_dim() != adapter.hidden_dim() {
        return Err(Error::Dimension(format!(
            "cnn input width {} differs from encoder hidden size {}",
            head.input_dim(),
            adapter.hidden_dim()
        )));
    }
    let out = adapter.encode(batch, head.config().max_width(), drop.as_deref_mut())?;
    softmax_rows(&head.logits(&out.token_states, &out.mask, drop)?)
}
