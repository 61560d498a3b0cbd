//! Personalization by retraining only the classification layer (TrC).
//!
//! A source model is frozen everywhere except `classifier.weight` and
//! `classifier.bias`, `k` labeled windows per activity are drawn from the new
//! user, and the classifier is fine-tuned on those windows alone with a fresh
//! optimizer.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};
use crate::model::{is_classifier_param, train, TrainOptions, TrainedModel};
use crate::rng::seeded;
use crate::signal::{ActivityLabel, SegmentTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSpec {
    /// Labeled windows drawn per activity.
    pub k: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TransferSpec {
    fn default() -> Self {
        TransferSpec {
            k: 3,
            epochs: 30,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl TransferSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(HarError::Config("k must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HarError::Config(format!(
                "transfer learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Target-subject windows split into the few labeled transfer instances and
/// the held-out remainder. Index vectors refer to positions in the slice the
/// split was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSplit {
    pub transfer: Vec<SegmentTensor>,
    pub holdout: Vec<SegmentTensor>,
    pub transfer_indices: Vec<usize>,
    pub holdout_indices: Vec<usize>,
}

pub fn freeze_all_but_classifier(mut model: TrainedModel) -> TrainedModel {
    model.freeze_all_but_classifier();
    model
}

/// Draws exactly `k` windows per class, uniformly without replacement.
///
/// Transfer instances are listed class by class; holdout keeps the original
/// order of `target`.
pub fn sample_transfer_instances(
    target: &[SegmentTensor],
    labels: &[ActivityLabel],
    k: usize,
    seed: u64,
) -> Result<TransferSplit> {
    if k == 0 {
        return Err(HarError::Parameter("k must be at least 1".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); labels.len()];
    for (i, s) in target.iter().enumerate() {
        let slot = by_class.get_mut(s.label.index).ok_or_else(|| {
            HarError::Data(format!(
                "segment label {} is outside the {}-class label set",
                s.label.index,
                labels.len()
            ))
        })?;
        slot.push(i);
    }
    let deficient: Vec<String> = by_class
        .iter()
        .zip(labels)
        .filter(|(idx, _)| idx.len() < k)
        .map(|(idx, l)| format!("{} ({} available)", l.name, idx.len()))
        .collect();
    if !deficient.is_empty() {
        return Err(HarError::Data(format!(
            "fewer than k={k} target segments for: {}",
            deficient.join(", ")
        )));
    }

    let mut rng = seeded(seed);
    let mut picked = vec![false; target.len()];
    let mut transfer_indices = Vec::with_capacity(k * labels.len());
    for idx in &by_class {
        let mut chosen: Vec<usize> = index::sample(&mut rng, idx.len(), k)
            .into_iter()
            .map(|j| idx[j])
            .collect();
        chosen.sort_unstable();
        for &i in &chosen {
            picked[i] = true;
        }
        transfer_indices.extend(chosen);
    }
    let holdout_indices: Vec<usize> = (0..target.len()).filter(|&i| !picked[i]).collect();
    Ok(TransferSplit {
        transfer: transfer_indices.iter().map(|&i| target[i].clone()).collect(),
        holdout: holdout_indices.iter().map(|&i| target[i].clone()).collect(),
        transfer_indices,
        holdout_indices,
    })
}

/// Retrains the classification layer of a frozen source model on the
/// transfer instances.
///
/// The source must already be frozen with [`freeze_all_but_classifier`].
/// Batch size and Adam moments come from the source config; the learning
/// rate, epoch count and seed from `spec`.
pub fn fine_tune(source: &TrainedModel, split: &TransferSplit, spec: &TransferSpec) -> Result<TrainedModel> {
    spec.validate()?;
    if let Some(p) = source
        .parameters
        .iter()
        .find(|p| p.frozen == is_classifier_param(&p.name))
    {
        return Err(HarError::Contract(format!(
            "fine-tuning needs every layer except the classifier frozen; `{}` has frozen={}",
            p.name, p.frozen
        )));
    }
    let mut optimizer = source.config.optimizer;
    optimizer.learning_rate = spec.learning_rate;
    let options = TrainOptions {
        epochs: spec.epochs,
        batch_size: source.config.batch_size,
        optimizer,
        seed: spec.seed,
    };
    Ok(train(source, &split.transfer, &options)?.0)
}
