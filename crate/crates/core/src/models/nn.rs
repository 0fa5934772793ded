//! Differentiable building blocks on candle tensors.

use candle_core::{Device, Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Seeded inverted dropout. Absent context means inference mode.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, rng: ChaCha8Rng) -> Self {
        Self { rate, rng }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn apply(&mut self, x: &Tensor) -> Result<Tensor> {
        if self.rate <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mask: Vec<f64> = (0..x.elem_count())
            .map(|_| if self.rng.gen::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?;
        Ok(x.mul(&mask)?)
    }
}

pub(crate) fn dropout(x: &Tensor, ctx: Option<&mut Dropout>) -> Result<Tensor> {
    match ctx {
        Some(d) => d.apply(x),
        None => Ok(x.clone()),
    }
}

/// `x · Wᵀ + b` with `W` stored as `(out, in)`.
pub(crate) fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let y = x.broadcast_matmul(&weight.t()?)?;
    Ok(y.broadcast_add(bias)?)
}

pub(crate) fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    Ok(normed.broadcast_mul(gamma)?.broadcast_add(beta)?)
}

pub(crate) fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(logits, D::Minus1)?)
}

/// Mean cross-entropy of probability rows against gold indices, with
/// probabilities clamped at 1e-12 before the log. Differentiable.
pub fn cross_entropy(probs: &Tensor, gold: &[usize]) -> Result<Tensor> {
    let (n, k) = probs.dims2()?;
    let mut onehot = vec![0f64; n * k];
    for (i, &g) in gold.iter().enumerate() {
        onehot[i * k + g] = 1.0;
    }
    let onehot = Tensor::from_vec(onehot, (n, k), &Device::Cpu)?;
    let picked = probs.mul(&onehot)?.sum(1)?;
    let nll = picked.maximum(crate::training::PROB_FLOOR)?.log()?.neg()?;
    Ok(nll.mean_all()?)
}

pub fn tensor_rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t.to_vec2::<f64>()?)
}
