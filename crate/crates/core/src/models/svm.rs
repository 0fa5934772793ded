//! Linear one-vs-rest SVM trained by dual coordinate descent.
//!
//! Each binary problem minimizes `½‖w‖² + C·Σ max(0, 1 − yᵢ·w·x̂ᵢ)` where
//! `x̂ = [x, 1]`, i.e. the bias is an extra regularized feature fixed at 1.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SparseVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmOptions {
    pub c: f64,
    /// Stop once the projected-gradient spread falls below this.
    pub tolerance: f64,
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self {
            c: 1.0,
            tolerance: 1e-6,
            max_passes: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    dim: usize,
    /// `n_classes × dim`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearSvm {
    pub fn from_parts(dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != dim * bias.len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} classes × {dim} features",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self { dim, weights, bias })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn class_weights(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    /// ‖w‖ over all classes, bias included.
    pub fn weight_norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.bias)
            .map(|w| w * w)
            .sum::<f64>()
            .sqrt()
    }

    fn check(&self, v: &SparseVector) -> Result<()> {
        if v.dim != self.dim {
            return Err(Error::Dimension(format!(
                "vector has dimension {}, model expects {}",
                v.dim, self.dim
            )));
        }
        Ok(())
    }

    pub fn decision_values(&self, v: &SparseVector) -> Result<Vec<f64>> {
        self.check(v)?;
        Ok((0..self.n_classes())
            .map(|k| v.dot_dense(self.class_weights(k)) + self.bias[k])
            .collect())
    }
}

/// First index of the maximum; lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Trains `n_classes` one-vs-rest linear SVMs.
pub fn svm_train(vectors: &[SparseVector], labels: &[usize], n_classes: usize, options: &SvmOptions) -> Result<LinearSvm> {
    if vectors.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} vectors but {} labels",
            vectors.len(),
            labels.len()
        )));
    }
    if options.c.is_nan() || options.c <= 0.0 {
        return Err(Error::invalid(format!("C must be positive, got {}", options.c)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::invalid(format!("label index {bad} outside [0, {n_classes})")));
    }
    let mut present = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::invalid("svm training needs at least two classes present"));
    }
    let dim = vectors[0].dim;
    if let Some(v) = vectors.iter().find(|v| v.dim != dim) {
        return Err(Error::Dimension(format!("mixed vector dimensions {dim} and {}", v.dim)));
    }

    let mut weights = Vec::with_capacity(n_classes * dim);
    let mut bias = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let y: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
        let (w, b) = train_binary(vectors, &y, dim, options);
        weights.extend(w);
        bias.push(b);
    }
    LinearSvm::from_parts(dim, weights, bias)
}

fn train_binary(x: &[SparseVector], y: &[f64], dim: usize, opt: &SvmOptions) -> (Vec<f64>, f64) {
    let n = x.len();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut alpha = vec![0.0; n];
    // ‖x̂ᵢ‖², bias feature included
    let q: Vec<f64> = x.iter().map(|v| v.norm().powi(2) + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    for _ in 0..opt.max_passes {
        order.shuffle(&mut rng);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for &i in &order {
            let g = y[i] * (x[i].dot_dense(&w) + b) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == opt.c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / q[i]).clamp(0.0, opt.c);
                let step = (alpha[i] - old) * y[i];
                if step != 0.0 {
                    for &(j, v) in &x[i].entries {
                        w[j as usize] += step * v;
                    }
                    b += step;
                }
            }
        }
        if pg_max - pg_min < opt.tolerance {
            break;
        }
    }
    (w, b)
}

/// Class with the highest decision value for each vector.
pub fn svm_predict(model: &LinearSvm, vectors: &[SparseVector]) -> Result<Vec<usize>> {
    vectors
        .iter()
        .map(|v| model.decision_values(v).map(|d| argmax(&d)))
        .collect()
}
