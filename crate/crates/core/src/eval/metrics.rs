use crate::error::{HarError, Result};
use crate::model::TrainedModel;
use crate::signal::SegmentTensor;

/// Anything that maps a segment to a class index.
pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn classify(&self, segment: &SegmentTensor) -> Result<usize>;
}

impl Classifier for TrainedModel {
    fn num_classes(&self) -> usize {
        self.config.classes
    }

    fn classify(&self, segment: &SegmentTensor) -> Result<usize> {
        self.predict_index(segment)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate<C: Classifier + ?Sized>(classifier: &C, segments: &[SegmentTensor]) -> Result<Evaluation> {
    if segments.is_empty() {
        return Err(HarError::Protocol("cannot evaluate on zero segments".into()));
    }
    let labels: Vec<usize> = segments.iter().map(|s| s.label.index).collect();
    let predictions = segments
        .iter()
        .map(|s| classifier.classify(s))
        .collect::<Result<Vec<_>>>()?;
    score_predictions(&labels, &predictions, classifier.num_classes())
}

/// Accuracy, macro-F1 and confusion from label/prediction pairs.
///
/// Classes that occur in neither labels nor predictions are left out of
/// the macro average.
pub fn score_predictions(labels: &[usize], predictions: &[usize], classes: usize) -> Result<Evaluation> {
    if labels.is_empty() {
        return Err(HarError::Protocol("cannot evaluate on zero segments".into()));
    }
    if labels.len() != predictions.len() {
        return Err(HarError::dim(
            "predictions",
            format!("{} labels vs {} predictions", labels.len(), predictions.len()),
        ));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&y, &p) in labels.iter().zip(predictions) {
        if y >= classes || p >= classes {
            return Err(HarError::Index {
                position: 0,
                index: y.max(p),
                bound: classes,
            });
        }
        confusion[y][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / labels.len() as f64;

    let mut f1_sum = 0.0;
    let mut present = 0usize;
    for c in 0..classes {
        let tp = confusion[c][c];
        let actual: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        if actual == 0 && predicted == 0 {
            continue;
        }
        present += 1;
        let fp = predicted - tp;
        let fn_ = actual - tp;
        f1_sum += 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
    }
    Ok(Evaluation {
        accuracy,
        macro_f1: f1_sum / present as f64,
        confusion,
    })
}
