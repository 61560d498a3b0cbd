//! Per-fold CSV output and per-variant summaries.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalReport;
use crate::error::{HarError, Result};

pub const CSV_HEADER: &str = "dataset,fold,subject,variant,seed,accuracy,macro_f1,n_train,n_transfer,n_test";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub fold: usize,
    pub subject: String,
    pub variant: String,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub n_train: usize,
    pub n_transfer: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
}

/// Floats are written with the shortest representation that parses back to
/// the same value.
pub fn to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        w.serialize(r)
            .map_err(|e| HarError::Format(format!("cannot write report row: {e}")))?;
    }
    let body = w
        .into_inner()
        .map_err(|e| HarError::Format(format!("cannot write report: {e}")))?;
    out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
    Ok(out)
}

pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == CSV_HEADER => {}
        Some(h) => {
            return Err(HarError::Format(format!(
                "unexpected report header `{h}`, expected `{CSV_HEADER}`"
            )))
        }
        None => return Err(HarError::Format("empty report".into())),
    }
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| HarError::Format(format!("report line {}: {e}", i + 2))))
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation over every (fold, seed) row of each
/// variant, in order of first appearance.
pub fn summarize(rows: &[ReportRow]) -> Vec<VariantSummary> {
    let mut variants: Vec<&str> = Vec::new();
    for r in rows {
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    variants
        .into_iter()
        .map(|v| {
            let acc: Vec<f64> = rows
                .iter()
                .filter(|r| r.variant == v)
                .map(|r| r.accuracy)
                .collect();
            let f1: Vec<f64> = rows
                .iter()
                .filter(|r| r.variant == v)
                .map(|r| r.macro_f1)
                .collect();
            let (mean_accuracy, std_accuracy) = mean_std(&acc);
            let (mean_macro_f1, std_macro_f1) = mean_std(&f1);
            VariantSummary {
                variant: v.to_string(),
                runs: acc.len(),
                mean_accuracy,
                std_accuracy,
                mean_macro_f1,
                std_macro_f1,
            }
        })
        .collect()
}

pub fn to_markdown(dataset: &str, summary: &[VariantSummary]) -> String {
    let mut out = format!("# {dataset}\n\n");
    out.push_str("| variant | runs | accuracy mean | accuracy std | macro-F1 mean | macro-F1 std |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for s in summary {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            s.variant, s.runs, s.mean_accuracy, s.std_accuracy, s.mean_macro_f1, s.std_macro_f1
        ));
    }
    out
}

pub fn export_report(report: &EvalReport, csv_path: &Path, md_path: &Path) -> Result<()> {
    let rows = report.csv_rows();
    fs::write(csv_path, to_csv(&rows)?).map_err(|e| HarError::io(csv_path, e))?;
    fs::write(md_path, to_markdown(&report.dataset, &summarize(&rows)))
        .map_err(|e| HarError::io(md_path, e))?;
    Ok(())
}
