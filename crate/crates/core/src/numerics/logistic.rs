//! Multinomial logistic regression trained by mini-batch gradient descent.

use super::rng::Rng;
use crate::error::{Error, Result};

const BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub n_classes: usize,
    pub dim: usize,
    /// Row-major `n_classes × dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl LogisticModel {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        Self {
            n_classes,
            dim,
            weights: vec![0.0; n_classes * dim],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                let w = &self.weights[c * self.dim..(c + 1) * self.dim];
                w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias[c]
            })
            .collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn weight_norm2(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean cross-entropy plus `½ l2 ‖W‖²` (bias unpenalized) and its gradient,
/// returned in the same layout as the model.
pub fn loss_and_gradient(
    model: &LogisticModel,
    xs: &[&[f64]],
    ys: &[usize],
    l2: f64,
) -> (f64, LogisticModel) {
    let mut grad = LogisticModel::zeros(model.n_classes, model.dim);
    let n = xs.len().max(1) as f64;
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = model.logits(x);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_total = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss -= z[y] - log_total;
        for c in 0..model.n_classes {
            let residual = (z[c] - log_total).exp() - if c == y { 1.0 } else { 0.0 };
            let g = &mut grad.weights[c * model.dim..(c + 1) * model.dim];
            for (gi, xi) in g.iter_mut().zip(x.iter()) {
                *gi += residual * xi / n;
            }
            grad.bias[c] += residual / n;
        }
    }
    loss /= n;
    loss += 0.5 * l2 * model.weight_norm2();
    for (g, w) in grad.weights.iter_mut().zip(&model.weights) {
        *g += l2 * w;
    }
    (loss, grad)
}

pub fn logistic_train(
    xs: &[&[f64]],
    ys: &[usize],
    n_classes: usize,
    config: &LogisticConfig,
) -> Result<LogisticModel> {
    if n_classes < 2 {
        return Err(Error::InvalidInput(
            "logistic regression needs at least 2 classes".into(),
        ));
    }
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::InvalidInput(
            "empty or misaligned training data".into(),
        ));
    }
    if let Some(&bad) = ys.iter().find(|&&y| y >= n_classes) {
        return Err(Error::InvalidInput(format!(
            "class index {bad} out of range"
        )));
    }
    if !(config.l2 >= 0.0 && config.learning_rate > 0.0) {
        return Err(Error::InvalidInput("l2 must be >= 0 and lr > 0".into()));
    }
    let dim = xs[0].len();
    let mut model = LogisticModel::zeros(n_classes, dim);
    let mut rng = Rng::new(config.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();

    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(BATCH_SIZE) {
            let bx: Vec<&[f64]> = batch.iter().map(|&i| xs[i]).collect();
            let by: Vec<usize> = batch.iter().map(|&i| ys[i]).collect();
            let (_, grad) = loss_and_gradient(&model, &bx, &by, config.l2);
            for (w, g) in model.weights.iter_mut().zip(&grad.weights) {
                *w -= config.learning_rate * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&grad.bias) {
                *b -= config.learning_rate * g;
            }
        }
    }
    let (loss, _) = loss_and_gradient(&model, xs, ys, config.l2);
    if !loss.is_finite() {
        return Err(Error::Degenerate(format!(
            "training loss diverged ({loss})"
        )));
    }
    Ok(model)
}
