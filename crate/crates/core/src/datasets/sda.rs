//! Sports and Daily Activities: `activity/subject/segment.txt`, each file
//! 125 rows x 45 comma-separated columns (5 units x 9 sensor columns, 25 Hz).
//!
//! Only the accelerometer columns are read. Unit `u` is assumed to store its
//! x/y/z acceleration in columns `9u .. 9u + 2`; [`SdaOptions`] overrides the
//! map if a copy of the dataset is laid out differently.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{sorted_subjects, Dataset};
use crate::error::{HarError, Result};
use crate::signal::{label_set, stack_channels, SegmentTensor};
use crate::tensor::Tensor;

pub const SAMPLE_RATE_HZ: f64 = 25.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SdaOptions {
    pub rows: usize,
    pub columns: usize,
    /// Per sensor unit, the x/y/z accelerometer column indices.
    pub accelerometer_columns: Vec<[usize; 3]>,
}

impl Default for SdaOptions {
    fn default() -> Self {
        SdaOptions {
            rows: 125,
            columns: 45,
            accelerometer_columns: (0..5).map(|u| [9 * u, 9 * u + 1, 9 * u + 2]).collect(),
        }
    }
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| HarError::io(dir, e))? {
        let path = entry.map_err(|e| HarError::io(dir, e))?.path();
        if path.is_dir() == want_dirs {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map_or_else(String::new, |n| n.to_string_lossy().into_owned())
}

/// Reads one segment file into a `[rows, columns]` row-major table.
fn read_table(path: &Path, options: &SdaOptions) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| HarError::io(path, e))?;
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != options.rows {
        return Err(HarError::Format(format!(
            "{}: expected {} rows, found {}",
            path.display(),
            options.rows,
            rows.len()
        )));
    }
    let mut table = Vec::with_capacity(options.rows * options.columns);
    for (r, line) in rows.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != options.columns {
            return Err(HarError::Format(format!(
                "{}: row {} has {} columns, expected {}",
                path.display(),
                r + 1,
                fields.len(),
                options.columns
            )));
        }
        for f in fields {
            let v = f.parse::<f64>().map_err(|_| {
                HarError::Format(format!(
                    "{}: row {}: `{f}` is not a number",
                    path.display(),
                    r + 1
                ))
            })?;
            table.push(v);
        }
    }
    Ok(table)
}

pub fn load_sda(dir: &Path) -> Result<Dataset> {
    load_sda_with(dir, &SdaOptions::default())
}

/// Loads every segment file, one 15-channel window per file. Activity
/// directory names (sorted) become the label set.
pub fn load_sda_with(dir: &Path, options: &SdaOptions) -> Result<Dataset> {
    if let Some(bad) = options
        .accelerometer_columns
        .iter()
        .flatten()
        .find(|&&c| c >= options.columns)
    {
        return Err(HarError::Config(format!(
            "accelerometer column {bad} outside {} columns",
            options.columns
        )));
    }
    let activity_dirs = sorted_entries(dir, true)?;
    let names: Vec<String> = activity_dirs.iter().map(|p| file_name(p)).collect();
    let labels = label_set(&names)?;

    // subject -> (activity index, file path), visited in sorted order
    let mut files: BTreeMap<String, Vec<(usize, PathBuf)>> = BTreeMap::new();
    for (a, adir) in activity_dirs.iter().enumerate() {
        for sdir in sorted_entries(adir, true)? {
            let subject = file_name(&sdir);
            let entry = files.entry(subject).or_default();
            for f in sorted_entries(&sdir, false)? {
                entry.push((a, f));
            }
        }
    }

    let rows = options.rows;
    let cols = options.columns;
    let mut segments = Vec::new();
    for (subject, list) in &files {
        for (ordinal, (a, path)) in list.iter().enumerate() {
            let table = read_table(path, options)?;
            let units = options
                .accelerometer_columns
                .iter()
                .map(|axes| {
                    let mut values = Vec::with_capacity(3 * rows);
                    for &c in axes {
                        values.extend((0..rows).map(|r| table[r * cols + c]));
                    }
                    Ok(SegmentTensor {
                        channels: Tensor::new(&[3, rows], values)?,
                        label: labels[*a].clone(),
                        subject_id: subject.clone(),
                        origin_index: ordinal * rows,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            segments.push(stack_channels(&units)?);
        }
    }

    let dataset = Dataset {
        name: "sda".into(),
        subjects: sorted_subjects(files.keys().map(String::as_str)),
        labels,
        segments,
        sample_rate_hz: SAMPLE_RATE_HZ,
    };
    dataset.validate()?;
    Ok(dataset)
}
