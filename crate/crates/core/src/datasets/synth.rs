//! Seeded synthetic multi-subject data.
//!
//! Channel `c` of activity `m` for subject `s` is
//! `A_s * sin(2 pi f_m t + phi_s + c pi / 6) + b_s + N(0, sigma)`, with the
//! per-subject amplitude `A_s`, phase `phi_s` and offset `b_s` drawn from
//! the configured ranges. The subject transform is what a personalized
//! model has to adapt to.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{load_csv_dir, write_csv_dir, Dataset};
use crate::digest::config_digest;
use crate::error::{HarError, Result};
use crate::rng::seeded;
use crate::signal::{ActivityLabel, SegmentTensor};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub subjects: usize,
    pub activities: usize,
    pub segments_per_activity: usize,
    pub window: usize,
    pub channels: usize,
    /// One base frequency per activity.
    pub frequencies_hz: Vec<f64>,
    pub amplitude_range: (f64, f64),
    pub phase_range: (f64, f64),
    pub bias_range: (f64, f64),
    pub noise_std: f64,
    pub sample_rate_hz: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 6,
            activities: 4,
            segments_per_activity: 10,
            window: 64,
            channels: 3,
            frequencies_hz: vec![1.0, 2.0, 3.0, 4.0],
            amplitude_range: (0.5, 2.0),
            phase_range: (0.0, std::f64::consts::TAU),
            bias_range: (-1.0, 1.0),
            noise_std: 0.3,
            sample_rate_hz: 20.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Defaults with `activities` frequencies `1, 2, .., M` Hz.
    pub fn with_shape(subjects: usize, activities: usize) -> Self {
        SynthConfig {
            subjects,
            activities,
            frequencies_hz: (1..=activities).map(|f| f as f64).collect(),
            ..SynthConfig::default()
        }
    }

    /// No subject shift: every subject gets amplitude 1, phase 0, offset 0.
    pub fn without_shift(mut self) -> Self {
        self.amplitude_range = (1.0, 1.0);
        self.phase_range = (0.0, 0.0);
        self.bias_range = (0.0, 0.0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarError::Config(m));
        if self.subjects < 2 {
            return fail(format!(
                "need at least 2 subjects for leave-one-subject-out, got {}",
                self.subjects
            ));
        }
        if self.activities < 2 {
            return fail(format!("need at least 2 activities, got {}", self.activities));
        }
        if self.frequencies_hz.len() != self.activities {
            return fail(format!(
                "{} frequencies given for {} activities",
                self.frequencies_hz.len(),
                self.activities
            ));
        }
        if self.segments_per_activity == 0 || self.window == 0 || self.channels == 0 {
            return fail("segments_per_activity, window and channels must be positive".into());
        }
        for (name, (lo, hi)) in [
            ("amplitude_range", self.amplitude_range),
            ("phase_range", self.phase_range),
            ("bias_range", self.bias_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return fail(format!("{name} must be finite with lo <= hi, got ({lo}, {hi})"));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail(format!("noise_std must be non-negative, got {}", self.noise_std));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return fail(format!(
                "sample_rate_hz must be positive, got {}",
                self.sample_rate_hz
            ));
        }
        if self.frequencies_hz.iter().any(|f| !f.is_finite()) {
            return fail("frequencies must be finite".into());
        }
        Ok(())
    }

    pub fn subject_ids(&self) -> Vec<String> {
        let width = self.subjects.to_string().len().max(2);
        (1..=self.subjects).map(|s| format!("s{s:0width$}")).collect()
    }

    pub fn activity_names(&self) -> Vec<String> {
        let width = (self.activities - 1).to_string().len().max(2);
        (0..self.activities).map(|m| format!("a{m:0width$}")).collect()
    }
}

/// Generates the dataset; a pure function of the config.
pub fn synth_generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = seeded(config.seed);
    let noise =
        Normal::new(0.0, config.noise_std).map_err(|e| HarError::Config(format!("noise_std: {e}")))?;
    let labels: Vec<ActivityLabel> = config
        .activity_names()
        .into_iter()
        .enumerate()
        .map(|(i, n)| ActivityLabel::new(i, n))
        .collect();
    let subjects = config.subject_ids();
    let (w, c_count, n_seg) = (config.window, config.channels, config.segments_per_activity);
    let draw = |rng: &mut crate::rng::HarRng, (lo, hi): (f64, f64)| rng.random_range(lo..=hi);

    let mut segments = Vec::with_capacity(subjects.len() * labels.len() * n_seg);
    for subject in &subjects {
        let amplitude = draw(&mut rng, config.amplitude_range);
        let phase = draw(&mut rng, config.phase_range);
        let bias = draw(&mut rng, config.bias_range);
        for (m, label) in labels.iter().enumerate() {
            let freq = config.frequencies_hz[m];
            for k in 0..n_seg {
                let origin = (m * n_seg + k) * w;
                let mut values = vec![0.0; c_count * w];
                for i in 0..w {
                    let t = (origin + i) as f64 / config.sample_rate_hz;
                    for c in 0..c_count {
                        let angle =
                            std::f64::consts::TAU * freq * t + phase + c as f64 * std::f64::consts::PI / 6.0;
                        values[c * w + i] = amplitude * angle.sin() + bias + noise.sample(&mut rng);
                    }
                }
                segments.push(SegmentTensor {
                    channels: Tensor::new(&[c_count, w], values)?,
                    label: label.clone(),
                    subject_id: subject.clone(),
                    origin_index: origin,
                });
            }
        }
    }
    let dataset = Dataset {
        name: "synth".into(),
        subjects,
        labels,
        segments,
        sample_rate_hz: config.sample_rate_hz,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub config_digest: String,
    pub subjects: Vec<String>,
    pub labels: Vec<String>,
    pub segments: usize,
    pub samples: usize,
    pub files: Vec<String>,
}

/// Writes per-subject CSV files plus `manifest.json`.
pub fn write_synth_dir(dataset: &Dataset, config: &SynthConfig, dir: &Path) -> Result<SynthManifest> {
    let files = write_csv_dir(dataset, dir)?;
    let manifest = SynthManifest {
        config: config.clone(),
        config_digest: config_digest(config),
        subjects: dataset.subjects.clone(),
        labels: dataset.labels.iter().map(|l| l.name.clone()).collect(),
        segments: dataset.segments.len(),
        samples: dataset.segments.len() * dataset.window(),
        files: files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| HarError::io(&path, e))?;
    Ok(manifest)
}

/// Reads a directory written by [`write_synth_dir`].
pub fn load_synth_dir(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| HarError::io(&path, e))?;
    let manifest: SynthManifest =
        serde_json::from_str(&text).map_err(|e| HarError::Format(format!("{}: {e}", path.display())))?;
    let window = manifest.config.window;
    let dataset = load_csv_dir(dir, "synth", window, window, manifest.config.sample_rate_hz)?;
    let names: Vec<&str> = dataset.labels.iter().map(|l| l.name.as_str()).collect();
    if names != manifest.labels || dataset.segments.len() != manifest.segments {
        return Err(HarError::Format(format!(
            "{}: directory contents disagree with manifest",
            dir.display()
        )));
    }
    Ok(dataset)
}
