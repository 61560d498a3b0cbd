//! WISDM raw file: `user,activity,timestamp,x,y,z;` per line, 20 Hz.

use std::fs;
use std::path::Path;

use super::{segment_runs, sorted_subjects, Dataset};
use crate::error::{HarError, Result};
use crate::signal::{label_set, ActivityLabel, RawSample};

pub const ACTIVITIES: [&str; 6] = [
    "Walking",
    "Jogging",
    "Upstairs",
    "Downstairs",
    "Sitting",
    "Standing",
];
pub const SAMPLE_RATE_HZ: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct WisdmOptions {
    pub window: usize,
    pub stride: usize,
    /// Records with any axis beyond this magnitude count as malformed.
    pub clip: f64,
    /// Loading fails when more than this fraction of records is malformed.
    pub max_malformed_fraction: f64,
}

impl Default for WisdmOptions {
    fn default() -> Self {
        WisdmOptions {
            window: 200,
            stride: 100,
            clip: 20.0,
            max_malformed_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseStats {
    pub parsed: usize,
    pub malformed: usize,
}

pub fn wisdm_labels() -> Vec<ActivityLabel> {
    label_set(&ACTIVITIES).expect("fixed label set is valid")
}

/// Parses one record (without the trailing `;`).
pub fn parse_record(record: &str, labels: &[ActivityLabel], clip: f64) -> Option<RawSample> {
    let fields: Vec<&str> = record
        .trim()
        .trim_end_matches(';')
        .split(',')
        .map(str::trim)
        .collect();
    let [user, activity, ts, x, y, z] = fields[..] else {
        return None;
    };
    if user.is_empty() {
        return None;
    }
    let activity = labels.iter().find(|l| l.name == activity)?.clone();
    let timestamp_ns = ts.parse::<i64>().ok()?;
    let mut axes = [0.0; 3];
    for (slot, s) in axes.iter_mut().zip([x, y, z]) {
        let v = s.parse::<f64>().ok()?;
        if !v.is_finite() || v.abs() > clip {
            return None;
        }
        *slot = v;
    }
    Some(RawSample {
        subject_id: user.to_string(),
        activity,
        timestamp_ns,
        ax: axes[0],
        ay: axes[1],
        az: axes[2],
    })
}

pub fn format_record(s: &RawSample) -> String {
    format!(
        "{},{},{},{},{},{};",
        s.subject_id, s.activity.name, s.timestamp_ns, s.ax, s.ay, s.az
    )
}

/// Parses file contents. Empty lines count as malformed.
pub fn parse_text(text: &str, clip: f64) -> (Vec<RawSample>, ParseStats) {
    let labels = wisdm_labels();
    let mut samples = Vec::new();
    let mut stats = ParseStats::default();
    for line in text.lines() {
        let records: Vec<&str> = line.split(';').map(str::trim).filter(|r| !r.is_empty()).collect();
        if records.is_empty() {
            stats.malformed += 1;
            continue;
        }
        for r in records {
            match parse_record(r, &labels, clip) {
                Some(s) => {
                    samples.push(s);
                    stats.parsed += 1;
                }
                None => stats.malformed += 1,
            }
        }
    }
    (samples, stats)
}

pub fn load_wisdm(path: &Path) -> Result<Dataset> {
    Ok(load_wisdm_with(path, &WisdmOptions::default())?.0)
}

pub fn load_wisdm_with(path: &Path, options: &WisdmOptions) -> Result<(Dataset, ParseStats)> {
    let text = fs::read_to_string(path).map_err(|e| HarError::io(path, e))?;
    let (samples, stats) = parse_text(&text, options.clip);
    let total = stats.parsed + stats.malformed;
    if total == 0 || stats.malformed as f64 > options.max_malformed_fraction * total as f64 {
        return Err(HarError::Format(format!(
            "{}: {} of {total} records malformed",
            path.display(),
            stats.malformed
        )));
    }
    if stats.malformed > 0 {
        log::info!(
            "{}: skipped {} malformed records",
            path.display(),
            stats.malformed
        );
    }
    let segments = segment_runs(&samples, options.window, options.stride)?;
    let dataset = Dataset {
        name: "wisdm".into(),
        subjects: sorted_subjects(samples.iter().map(|s| s.subject_id.as_str())),
        labels: wisdm_labels(),
        segments,
        sample_rate_hz: SAMPLE_RATE_HZ,
    };
    dataset.validate()?;
    Ok((dataset, stats))
}
