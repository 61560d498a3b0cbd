//! Dataset containers and loaders.
//!
//! - [`wisdm`]: the WISDM raw accelerometer text file.
//! - [`sda`]: the Sports and Daily Activities directory tree (5 units).
//! - [`synth`]: seeded multi-subject sinusoid data with per-subject shift.
//! - [`csv_dir`]: a directory of per-subject CSV files, used to persist
//!   synthetic datasets.

pub mod csv_dir;
pub mod sda;
pub mod synth;
pub mod wisdm;

use std::collections::{BTreeSet, HashMap};

use crate::error::{HarError, Result};
use crate::signal::{segment, validate_label_set, ActivityLabel, RawSample, SegmentTensor};

pub use csv_dir::{load_csv_dir, write_csv_dir};
pub use sda::{load_sda, load_sda_with, SdaOptions};
pub use synth::{load_synth_dir, synth_generate, write_synth_dir, SynthConfig, SynthManifest};
pub use wisdm::{load_wisdm, load_wisdm_with, WisdmOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub subjects: Vec<String>,
    pub labels: Vec<ActivityLabel>,
    pub segments: Vec<SegmentTensor>,
    pub sample_rate_hz: f64,
}

impl Dataset {
    /// Checks label contiguity, that every segment's subject and label are
    /// declared, that all segments share one shape, and that there are at
    /// least two subjects.
    pub fn validate(&self) -> Result<()> {
        validate_label_set(&self.labels)?;
        if self.subjects.len() < 2 {
            return Err(HarError::Data(format!(
                "dataset `{}` has {} subject(s); leave-one-subject-out needs at least 2",
                self.name,
                self.subjects.len()
            )));
        }
        let subjects: BTreeSet<&str> = self.subjects.iter().map(String::as_str).collect();
        if subjects.len() != self.subjects.len() {
            return Err(HarError::Data("duplicate subject ids".into()));
        }
        let shape = self.segments.first().map(|s| s.channels.shape().to_vec());
        for s in &self.segments {
            if !subjects.contains(s.subject_id.as_str()) {
                return Err(HarError::Data(format!(
                    "segment from undeclared subject `{}`",
                    s.subject_id
                )));
            }
            if self.labels.get(s.label.index) != Some(&s.label) {
                return Err(HarError::Data(format!(
                    "segment with undeclared label `{}`",
                    s.label.name
                )));
            }
            if Some(s.channels.shape().to_vec()) != shape {
                return Err(HarError::Data(format!(
                    "segment shapes differ: {:?} vs {:?}",
                    s.channels.shape(),
                    shape
                )));
            }
        }
        Ok(())
    }

    pub fn num_channels(&self) -> usize {
        self.segments.first().map_or(0, SegmentTensor::num_channels)
    }

    pub fn window(&self) -> usize {
        self.segments.first().map_or(0, SegmentTensor::window)
    }

    pub fn subject_segments(&self, subject: &str) -> Vec<SegmentTensor> {
        self.segments
            .iter()
            .filter(|s| s.subject_id == subject)
            .cloned()
            .collect()
    }

    pub fn segments_excluding(&self, subject: &str) -> Vec<SegmentTensor> {
        self.segments
            .iter()
            .filter(|s| s.subject_id != subject)
            .cloned()
            .collect()
    }

    pub fn has_subject(&self, subject: &str) -> bool {
        self.subjects.iter().any(|s| s == subject)
    }
}

/// Splits a sample stream into contiguous (subject, activity) runs and
/// segments each. `origin_index` counts samples from the start of each
/// subject's recording, so it is unique per subject.
pub(crate) fn segment_runs(
    samples: &[RawSample],
    window: usize,
    stride: usize,
) -> Result<Vec<SegmentTensor>> {
    let mut per_subject: HashMap<&str, usize> = HashMap::new();
    let mut out = Vec::new();
    let mut start = 0;
    while start < samples.len() {
        let head = &samples[start];
        let len = samples[start..]
            .iter()
            .take_while(|s| s.subject_id == head.subject_id && s.activity == head.activity)
            .count();
        let offset = per_subject.entry(head.subject_id.as_str()).or_insert(0);
        for mut seg in segment(&samples[start..start + len], window, stride)? {
            seg.origin_index += *offset;
            out.push(seg);
        }
        *offset += len;
        start += len;
    }
    Ok(out)
}

/// Subject ids in lexicographic order.
pub(crate) fn sorted_subjects<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    ids.collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect()
}
