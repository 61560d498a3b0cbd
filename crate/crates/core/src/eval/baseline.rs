//! Multinomial logistic regression on per-channel summary statistics.

use serde::{Deserialize, Serialize};

use super::metrics::Classifier;
use crate::error::{HarError, Result};
use crate::layers::{dense_forward, softmax_cross_entropy};
use crate::model::argmax;
use crate::signal::SegmentTensor;
use crate::tensor::Tensor;

pub const FEATURES_PER_CHANNEL: usize = 5;

/// Per channel: mean, population standard deviation, min, max and mean
/// absolute value, concatenated channel by channel.
pub fn extract_shallow_features(segment: &SegmentTensor) -> Vec<f64> {
    let c = segment.num_channels();
    let w = segment.channels.len() / c;
    let mut out = Vec::with_capacity(FEATURES_PER_CHANNEL * c);
    for ch in 0..c {
        let x = &segment.channels.values()[ch * w..(ch + 1) * w];
        let n = w as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let min = x.iter().copied().fold(f64::INFINITY, f64::min);
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let energy = x.iter().map(|v| v.abs()).sum::<f64>() / n;
        out.extend([mean, var.sqrt(), min, max, energy]);
    }
    out
}

/// Per-dimension z-scoring with statistics from the training pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        let d = features
            .first()
            .ok_or_else(|| HarError::TrainingData("no feature vectors to standardize".into()))?
            .len();
        let n = features.len() as f64;
        let mut mean = vec![0.0; d];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for f in features {
            for ((s, v), m) in std.iter_mut().zip(f).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        // constant dimensions are centered but not scaled
        let std = std
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrOptions {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for LrOptions {
    fn default() -> Self {
        LrOptions {
            epochs: 500,
            learning_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearClassifier {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        LinearClassifier {
            weight: Tensor::zeros(&[classes, dim]),
            bias: Tensor::zeros(&[classes]),
        }
    }

    pub fn scores(&self, features: &[f64]) -> Result<Tensor> {
        dense_forward(&Tensor::from_vec(features.to_vec())?, &self.weight, &self.bias)
    }
}

/// Mean softmax cross-entropy over a batch and its gradient with respect
/// to the weight and bias.
pub fn lr_loss_and_gradient(
    model: &LinearClassifier,
    features: &[Vec<f64>],
    labels: &[usize],
) -> Result<(f64, Tensor, Tensor)> {
    let (m, d) = (model.weight.shape()[0], model.weight.shape()[1]);
    let n = features.len() as f64;
    let mut gw = vec![0.0; m * d];
    let mut gb = vec![0.0; m];
    let mut loss = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let (l, dz) = softmax_cross_entropy(&model.scores(x)?, y)?;
        loss += l / n;
        for (i, &g) in dz.values().iter().enumerate() {
            gb[i] += g / n;
            for (j, &xv) in x.iter().enumerate() {
                gw[i * d + j] += g * xv / n;
            }
        }
    }
    Ok((loss, Tensor::new(&[m, d], gw)?, Tensor::new(&[m], gb)?))
}

/// Full-batch gradient descent from zero weights. Features are expected to
/// be standardized already.
pub fn train_lr_baseline(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    options: &LrOptions,
) -> Result<LinearClassifier> {
    if features.len() != labels.len() {
        return Err(HarError::dim("labels", "one label per feature vector required"));
    }
    let dim = features.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(HarError::TrainingData("no training features".into()));
    }
    let mut counts = vec![0usize; classes];
    for &y in labels {
        *counts.get_mut(y).ok_or(HarError::Index {
            position: 0,
            index: y,
            bound: classes,
        })? += 1;
    }
    let missing: Vec<String> = (0..classes)
        .filter(|&c| counts[c] == 0)
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(HarError::TrainingData(format!(
            "no training samples for classes {}",
            missing.join(", ")
        )));
    }

    let mut model = LinearClassifier::zeros(classes, dim);
    for _ in 0..options.epochs {
        let (_, gw, gb) = lr_loss_and_gradient(&model, features, labels)?;
        for (w, g) in model.weight.values_mut().iter_mut().zip(gw.values()) {
            *w -= options.learning_rate * g;
        }
        for (b, g) in model.bias.values_mut().iter_mut().zip(gb.values()) {
            *b -= options.learning_rate * g;
        }
    }
    Ok(model)
}

/// Feature extraction, standardization and logistic regression in one
/// [`Classifier`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShallowBaseline {
    pub standardizer: Standardizer,
    pub classifier: LinearClassifier,
}

impl ShallowBaseline {
    pub fn fit(segments: &[SegmentTensor], classes: usize, options: &LrOptions) -> Result<Self> {
        let raw: Vec<Vec<f64>> = segments.iter().map(extract_shallow_features).collect();
        let standardizer = Standardizer::fit(&raw)?;
        let features: Vec<Vec<f64>> = raw.iter().map(|f| standardizer.apply(f)).collect();
        let labels: Vec<usize> = segments.iter().map(|s| s.label.index).collect();
        let classifier = train_lr_baseline(&features, &labels, classes, options)?;
        Ok(ShallowBaseline {
            standardizer,
            classifier,
        })
    }
}

impl Classifier for ShallowBaseline {
    fn num_classes(&self) -> usize {
        self.classifier.bias.len()
    }

    fn classify(&self, segment: &SegmentTensor) -> Result<usize> {
        let x = self.standardizer.apply(&extract_shallow_features(segment));
        Ok(argmax(self.classifier.scores(&x)?.values()))
    }
}
