//! A directory of per-subject CSV files with header
//! `subject,activity,timestamp_ns,ax,ay,az`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{segment_runs, sorted_subjects, Dataset};
use crate::error::{HarError, Result};
use crate::signal::{label_set, RawSample};

pub const HEADER: [&str; 6] = ["subject", "activity", "timestamp_ns", "ax", "ay", "az"];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    subject: String,
    activity: String,
    timestamp_ns: i64,
    ax: f64,
    ay: f64,
    az: f64,
}

fn csv_err(path: &Path, e: csv::Error) -> HarError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HarError::io(path, io),
        other => HarError::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Writes each subject's windows back out as a sample stream, one file per
/// subject. Windows must be 3-channel and non-overlapping.
pub fn write_csv_dir(dataset: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    if dataset.num_channels() != 3 {
        return Err(HarError::Config(format!(
            "CSV directories hold 3-axis data; dataset has {} channels",
            dataset.num_channels()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| HarError::io(dir, e))?;
    let period_ns = (1e9 / dataset.sample_rate_hz).round() as i64;
    let mut written = Vec::new();
    for subject in &dataset.subjects {
        let mut segs: Vec<_> = dataset
            .segments
            .iter()
            .filter(|s| &s.subject_id == subject)
            .collect();
        segs.sort_by_key(|s| s.origin_index);
        for pair in segs.windows(2) {
            if pair[0].origin_index + pair[0].window() > pair[1].origin_index {
                return Err(HarError::Data(format!(
                    "subject {subject}: overlapping windows cannot be written as a stream"
                )));
            }
        }
        let path = dir.join(format!("{subject}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        for s in segs {
            let len = s.window();
            for i in 0..len {
                let v = |c: usize| s.channels.values()[c * len + i];
                w.serialize(Row {
                    subject: subject.clone(),
                    activity: s.label.name.clone(),
                    timestamp_ns: (s.origin_index + i) as i64 * period_ns,
                    ax: v(0),
                    ay: v(1),
                    az: v(2),
                })
                .map_err(|e| csv_err(&path, e))?;
            }
        }
        w.flush().map_err(|e| HarError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Reads every `*.csv` file in `dir` (sorted by name) and segments each
/// contiguous subject-activity run. The label set is the sorted set of
/// activity names.
pub fn load_csv_dir(
    dir: &Path,
    name: &str,
    window: usize,
    stride: usize,
    sample_rate_hz: f64,
) -> Result<Dataset> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| HarError::io(dir, e))? {
        let path = entry.map_err(|e| HarError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            files.push(path);
        }
    }
    files.sort();

    let mut rows = Vec::new();
    for path in &files {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = r.headers().map_err(|e| csv_err(path, e))?;
        if header.iter().ne(HEADER) {
            return Err(HarError::Format(format!(
                "{}: header must be `{}`",
                path.display(),
                HEADER.join(",")
            )));
        }
        for row in r.deserialize::<Row>() {
            rows.push(row.map_err(|e| csv_err(path, e))?);
        }
    }

    let names: Vec<&str> = rows
        .iter()
        .map(|r| r.activity.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let labels = label_set(&names)?;
    let samples: Vec<RawSample> = rows
        .iter()
        .map(|r| RawSample {
            subject_id: r.subject.clone(),
            activity: labels
                .iter()
                .find(|l| l.name == r.activity)
                .expect("collected above")
                .clone(),
            timestamp_ns: r.timestamp_ns,
            ax: r.ax,
            ay: r.ay,
            az: r.az,
        })
        .collect();

    let dataset = Dataset {
        name: name.to_string(),
        subjects: sorted_subjects(samples.iter().map(|s| s.subject_id.as_str())),
        labels,
        segments: segment_runs(&samples, window, stride)?,
        sample_rate_hz,
    };
    dataset.validate()?;
    Ok(dataset)
}
