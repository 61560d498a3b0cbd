//! Leave-one-subject-out experiments.
//!
//! Each fold holds out one subject. Per fold and seed a source network is
//! trained on the other subjects, `k` windows per activity are drawn from
//! the held-out subject as transfer instances, and every requested variant
//! is scored on the remaining windows:
//!
//! - `trc`: the source network with only its classification layer
//!   fine-tuned on the transfer instances;
//! - `frozen_source`: the source network as is;
//! - `lr_baseline`: logistic regression on summary features, trained on the
//!   other subjects plus the transfer instances.

pub mod baseline;
pub mod metrics;
pub mod report;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::digest::config_digest;
use crate::error::{HarError, Result};
use crate::model::{build_network, to_bytes, train, NetworkConfig, TrainedModel};
use crate::rng::{derive_seed, seeded};
use crate::signal::{SegmentId, SegmentTensor};
use crate::transfer::{fine_tune, freeze_all_but_classifier, sample_transfer_instances, TransferSpec};

pub use baseline::{extract_shallow_features, train_lr_baseline, LrOptions, ShallowBaseline};
pub use metrics::{evaluate, score_predictions, Classifier, Evaluation};
pub use report::{export_report, parse_csv, summarize, to_csv, to_markdown, ReportRow, VariantSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Trc,
    FrozenSource,
    LrBaseline,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Trc, Variant::FrozenSource, Variant::LrBaseline];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Trc => "trc",
            Variant::FrozenSource => "frozen_source",
            Variant::LrBaseline => "lr_baseline",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = HarError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| {
            HarError::Config(format!(
                "unknown variant `{s}` (expected trc, frozen_source or lr_baseline)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub test_subject: String,
    pub train_subjects: Vec<String>,
}

/// One fold per subject, in lexicographic subject order.
pub fn loso_folds(dataset: &Dataset) -> Result<Vec<Fold>> {
    let mut subjects = dataset.subjects.clone();
    subjects.sort();
    subjects.dedup();
    if subjects.len() < 2 {
        return Err(HarError::Protocol(format!(
            "leave-one-subject-out needs at least 2 subjects, dataset `{}` has {}",
            dataset.name,
            subjects.len()
        )));
    }
    Ok(subjects
        .iter()
        .enumerate()
        .map(|(index, test)| Fold {
            index,
            test_subject: test.clone(),
            train_subjects: subjects.iter().filter(|s| *s != test).cloned().collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub subject: String,
    pub variant: Variant,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<usize>>,
    pub n_train: usize,
    pub n_transfer: usize,
    pub n_test: usize,
}

/// What each fold actually used, for leakage and protocol checks.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldAudit {
    pub fold: usize,
    pub subject: String,
    pub seed: u64,
    pub transfer_ids: Vec<SegmentId>,
    pub transfer_per_class: Vec<usize>,
    pub evaluated_ids: Vec<SegmentId>,
    /// Digest of the source checkpoint, identical for every variant that
    /// used it.
    pub source_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub config_digest: String,
    pub rows: Vec<FoldResult>,
    pub audits: Vec<FoldAudit>,
}

impl EvalReport {
    pub fn csv_rows(&self) -> Vec<ReportRow> {
        self.rows
            .iter()
            .map(|r| ReportRow {
                dataset: self.dataset.clone(),
                fold: r.fold,
                subject: r.subject.clone(),
                variant: r.variant.as_str().to_string(),
                seed: r.seed,
                accuracy: r.accuracy,
                macro_f1: r.macro_f1,
                n_train: r.n_train,
                n_transfer: r.n_transfer,
                n_test: r.n_test,
            })
            .collect()
    }

    pub fn summary(&self) -> Vec<VariantSummary> {
        summarize(&self.csv_rows())
    }

    pub fn mean_accuracy(&self, variant: Variant) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|s| s.variant == variant.as_str())
            .map(|s| s.mean_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    /// Input geometry and class count must match the dataset.
    pub network: NetworkConfig,
    pub transfer: TransferSpec,
    pub baseline: LrOptions,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Worker threads; output does not depend on it.
    #[serde(skip)]
    pub parallelism: usize,
}

impl ExperimentPlan {
    pub fn new(network: NetworkConfig) -> Self {
        ExperimentPlan {
            network,
            transfer: TransferSpec::default(),
            baseline: LrOptions::default(),
            variants: Variant::ALL.to_vec(),
            seeds: (0..5).collect(),
            parallelism: 1,
        }
    }

    pub fn digest(&self) -> String {
        config_digest(self)
    }
}

const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;
const FINE_TUNE_STREAM: u64 = 4;

/// Trains a source network on `segments`: fits the discretizer, adopts the
/// dataset's labels and runs the configured number of epochs.
pub fn train_source(
    config: &NetworkConfig,
    dataset: &Dataset,
    segments: &[SegmentTensor],
) -> Result<(TrainedModel, crate::model::TrainingHistory)> {
    let mut model = build_network(config, &mut seeded(derive_seed(config.seed, INIT_STREAM)))?;
    model.set_labels(dataset.labels.clone())?;
    model.fit_discretizer(segments)?;
    let mut options = config.train_options();
    options.seed = derive_seed(config.seed, TRAIN_STREAM);
    train(&model, segments, &options)
}

fn check_plan(dataset: &Dataset, plan: &ExperimentPlan) -> Result<()> {
    dataset.validate()?;
    plan.network.validate()?;
    plan.transfer.validate()?;
    let net = &plan.network;
    if net.input_channels != dataset.num_channels()
        || net.window != dataset.window()
        || net.classes != dataset.labels.len()
    {
        return Err(HarError::Config(format!(
            "network expects {} channels x {} samples, {} classes; dataset `{}` has {} x {}, {}",
            net.input_channels,
            net.window,
            net.classes,
            dataset.name,
            dataset.num_channels(),
            dataset.window(),
            dataset.labels.len()
        )));
    }
    if plan.variants.is_empty() {
        return Err(HarError::Config("no variants requested".into()));
    }
    if plan.seeds.is_empty() {
        return Err(HarError::Config("no seeds requested".into()));
    }
    Ok(())
}

fn run_unit(
    dataset: &Dataset,
    plan: &ExperimentPlan,
    fold: &Fold,
    seed: u64,
) -> Result<(Vec<FoldResult>, FoldAudit)> {
    let train_segments = dataset.segments_excluding(&fold.test_subject);
    let target = dataset.subject_segments(&fold.test_subject);
    let split_seed = derive_seed(
        derive_seed(seed, SPLIT_STREAM) ^ plan.transfer.seed,
        fold.index as u64,
    );
    let split = sample_transfer_instances(&target, &dataset.labels, plan.transfer.k, split_seed)?;

    let transfer_ids: Vec<SegmentId> = split.transfer.iter().map(SegmentTensor::id).collect();
    let evaluated_ids: Vec<SegmentId> = split.holdout.iter().map(SegmentTensor::id).collect();
    if let Some(leak) = transfer_ids.iter().find(|id| evaluated_ids.contains(id)) {
        return Err(HarError::Protocol(format!(
            "transfer instance {leak:?} also appears in the holdout set"
        )));
    }
    let mut transfer_per_class = vec![0; dataset.labels.len()];
    for s in &split.transfer {
        transfer_per_class[s.label.index] += 1;
    }

    let needs_source = plan
        .variants
        .iter()
        .any(|v| matches!(v, Variant::Trc | Variant::FrozenSource));
    let source = if needs_source {
        let mut cfg = plan.network.clone();
        cfg.seed = seed;
        Some(train_source(&cfg, dataset, &train_segments)?.0)
    } else {
        None
    };
    let source_digest = source
        .as_ref()
        .map(|m| to_bytes(m).map(|b| config_digest(&b)))
        .transpose()?;

    let mut rows = Vec::with_capacity(plan.variants.len());
    for &variant in &plan.variants {
        let (evaluation, n_train, n_transfer) = match variant {
            Variant::FrozenSource => {
                let model = source.as_ref().expect("trained above");
                (evaluate(model, &split.holdout)?, train_segments.len(), 0)
            }
            Variant::Trc => {
                let frozen = freeze_all_but_classifier(source.clone().expect("trained above"));
                let spec = TransferSpec {
                    seed: derive_seed(seed ^ plan.transfer.seed, FINE_TUNE_STREAM),
                    ..plan.transfer
                };
                let tuned = fine_tune(&frozen, &split, &spec)?;
                (
                    evaluate(&tuned, &split.holdout)?,
                    train_segments.len(),
                    split.transfer.len(),
                )
            }
            Variant::LrBaseline => {
                let mut pool = train_segments.clone();
                pool.extend(split.transfer.iter().cloned());
                let lr = ShallowBaseline::fit(&pool, dataset.labels.len(), &plan.baseline)?;
                (evaluate(&lr, &split.holdout)?, pool.len(), split.transfer.len())
            }
        };
        rows.push(FoldResult {
            fold: fold.index,
            subject: fold.test_subject.clone(),
            variant,
            seed,
            accuracy: evaluation.accuracy,
            macro_f1: evaluation.macro_f1,
            confusion: evaluation.confusion,
            n_train,
            n_transfer,
            n_test: split.holdout.len(),
        });
    }

    if let (Some(src), Some(digest)) = (&source, &source_digest) {
        if &config_digest(&to_bytes(src)?) != digest {
            return Err(HarError::Contract(
                "source model changed during evaluation".into(),
            ));
        }
    }

    Ok((
        rows,
        FoldAudit {
            fold: fold.index,
            subject: fold.test_subject.clone(),
            seed,
            transfer_ids,
            transfer_per_class,
            evaluated_ids,
            source_digest,
        },
    ))
}

/// Runs every (fold, seed) unit and merges results in (fold, seed, variant)
/// order, so the report is the same for any degree of parallelism.
pub fn run_experiment(dataset: &Dataset, plan: &ExperimentPlan) -> Result<EvalReport> {
    check_plan(dataset, plan)?;
    let folds = loso_folds(dataset)?;
    let units: Vec<(&Fold, u64)> = folds
        .iter()
        .flat_map(|f| plan.seeds.iter().map(move |&s| (f, s)))
        .collect();

    let run = |&(fold, seed): &(&Fold, u64)| {
        log::debug!("fold {} (subject {}) seed {seed}", fold.index, fold.test_subject);
        run_unit(dataset, plan, fold, seed).map_err(|e| HarError::Fold {
            fold: fold.index,
            subject: fold.test_subject.clone(),
            source: Box::new(e),
        })
    };
    let results: Vec<Result<(Vec<FoldResult>, FoldAudit)>> = if plan.parallelism <= 1 {
        units.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(plan.parallelism)
            .build()
            .map_err(|e| HarError::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| units.par_iter().map(run).collect())
    };

    let mut rows = Vec::new();
    let mut audits = Vec::new();
    for r in results {
        let (r, a) = r?;
        rows.extend(r);
        audits.push(a);
    }
    Ok(EvalReport {
        dataset: dataset.name.clone(),
        config_digest: plan.digest(),
        rows,
        audits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_generate, SynthConfig};

    #[test]
    fn fold_enumeration() {
        let mut d = synth_generate(&SynthConfig::with_shape(8, 2)).unwrap();
        let folds = loso_folds(&d).unwrap();
        assert_eq!(folds.len(), 8);
        assert!(folds.iter().all(|f| f.train_subjects.len() == 7));
        assert!(folds.iter().all(|f| !f.train_subjects.contains(&f.test_subject)));

        d.subjects.truncate(2);
        assert_eq!(loso_folds(&d).unwrap().len(), 2);
        d.subjects.truncate(1);
        assert!(matches!(loso_folds(&d), Err(HarError::Protocol(_))));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("dt".parse::<Variant>().is_err());
    }
}
