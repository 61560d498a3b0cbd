use std::fs;
use std::path::{Path, PathBuf};

use har_core::datasets::{
    load_csv_dir, load_sda, load_synth_dir, load_wisdm_with, synth_generate, write_synth_dir, SynthConfig,
    WisdmOptions,
};
use har_core::eval::{
    evaluate as score, export_report, parse_csv, run_experiment, summarize, to_markdown, train_source,
    ExperimentPlan, Variant,
};
use har_core::model::{load_checkpoint, save_checkpoint};
use har_core::transfer::{fine_tune, freeze_all_but_classifier, sample_transfer_instances};
use har_core::{Dataset, HarError};
use serde_json::json;

use crate::config::{write_lock, DatasetSection, RunConfig};
use crate::{
    CliError, DataArgs, DatasetKind, EvaluateArgs, LosoArgs, ReportArgs, SynthArgs, TrainArgs, TransferArgs,
};

type CmdResult = Result<String, CliError>;

/// Conventional file name of the WISDM v1.1 raw export.
const WISDM_FILE: &str = "WISDM_ar_v1.1_raw.txt";
const CSV_SAMPLE_RATE_HZ: f64 = 20.0;

fn io_err(path: &Path, e: std::io::Error) -> HarError {
    HarError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_parent(path: &Path) -> har_core::Result<()> {
    let dir = parent_dir(path);
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))
}

fn kind_name(kind: DatasetKind) -> &'static str {
    match kind {
        DatasetKind::Wisdm => "wisdm",
        DatasetKind::Sda => "sda",
        DatasetKind::Synth => "synth",
        DatasetKind::Csv => "csv",
    }
}

pub fn load_dataset(args: &DataArgs, section: &DatasetSection) -> har_core::Result<Dataset> {
    let path = args.data.as_path();
    match args.dataset {
        DatasetKind::Wisdm => {
            let file = if path.is_dir() {
                path.join(WISDM_FILE)
            } else {
                path.to_path_buf()
            };
            let defaults = WisdmOptions::default();
            let options = WisdmOptions {
                window: section.window.unwrap_or(defaults.window),
                stride: section.stride.unwrap_or(defaults.stride),
                ..defaults
            };
            let (dataset, stats) = load_wisdm_with(&file, &options)?;
            log::info!(
                "{}: {} records, {} malformed",
                file.display(),
                stats.parsed,
                stats.malformed
            );
            Ok(dataset)
        }
        DatasetKind::Sda => load_sda(path),
        DatasetKind::Synth => load_synth_dir(path),
        DatasetKind::Csv => {
            let window = section.window.unwrap_or(WisdmOptions::default().window);
            let stride = section.stride.unwrap_or(window);
            load_csv_dir(path, "csv", window, stride, CSV_SAMPLE_RATE_HZ)
        }
    }
}

fn check_subject(dataset: &Dataset, subject: &str) -> har_core::Result<()> {
    if dataset.has_subject(subject) {
        return Ok(());
    }
    Err(HarError::Data(format!(
        "unknown subject `{subject}`; available: {}",
        dataset.subjects.join(", ")
    )))
}

pub fn synth(args: &SynthArgs) -> CmdResult {
    if args.subjects < 2 {
        return Err(CliError::Usage(format!(
            "--subjects must be at least 2 (leave-one-subject-out needs a held-out subject and at least one \
             training subject), got {}",
            args.subjects
        )));
    }
    if args.activities < 2 {
        return Err(CliError::Usage(format!(
            "--activities must be at least 2, got {}",
            args.activities
        )));
    }
    let mut config = SynthConfig::with_shape(args.subjects, args.activities);
    config.seed = args.seed;
    if let Some(n) = args.segments_per_activity {
        config.segments_per_activity = n;
    }
    if let Some(w) = args.window {
        config.window = w;
    }
    if let Some(s) = args.noise_std {
        config.noise_std = s;
    }
    if args.no_shift {
        config = config.without_shift();
    }
    let dataset = synth_generate(&config)?;
    let manifest = write_synth_dir(&dataset, &config, &args.out)?;
    write_lock(&args.out, &json!({ "command": "synth", "synth": config }))?;
    Ok(format!(
        "synth: {} subjects, {} activities, {} segments, digest {} -> {}",
        manifest.subjects.len(),
        manifest.labels.len(),
        manifest.segments,
        manifest.config_digest,
        args.out.display()
    ))
}

pub fn train(args: &TrainArgs) -> CmdResult {
    let config = RunConfig::load(args.config.as_deref())?;
    let dataset = load_dataset(&args.data, &config.dataset)?;
    let segments = match &args.exclude {
        Some(subject) => {
            check_subject(&dataset, subject)?;
            dataset.segments_excluding(subject)
        }
        None => dataset.segments.clone(),
    };
    let network = config
        .network
        .resolve(dataset.num_channels(), dataset.window(), dataset.labels.len());
    let (model, history) = train_source(&network, &dataset, &segments)?;
    ensure_parent(&args.out)?;
    save_checkpoint(&model, &args.out)?;

    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| args.out.with_extension("log.json"));
    let log_json = serde_json::to_string_pretty(&history).expect("history serializes");
    fs::write(&log_path, log_json + "\n").map_err(|e| io_err(&log_path, e))?;
    write_lock(
        &parent_dir(&args.out),
        &json!({
            "command": "train",
            "dataset": {
                "kind": kind_name(args.data.dataset),
                "path": args.data.data,
                "window": config.dataset.window,
                "stride": config.dataset.stride,
            },
            "exclude": args.exclude,
            "network": network,
        }),
    )?;

    let initial = history.initial_loss.unwrap_or(f64::NAN);
    let last = history.epoch_losses.last().copied().unwrap_or(f64::NAN);
    Ok(format!(
        "train: {} segments, {} epochs, initial loss {initial:.6}, final loss {last:.6} -> {}",
        segments.len(),
        history.epoch_losses.len(),
        args.out.display()
    ))
}

pub fn transfer(args: &TransferArgs) -> CmdResult {
    let config = RunConfig::load(args.config.as_deref())?;
    let mut spec = config.transfer;
    if let Some(k) = args.k {
        spec.k = k;
    }
    if let Some(e) = args.epochs {
        spec.epochs = e;
    }
    if let Some(lr) = args.lr {
        spec.learning_rate = lr;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    spec.validate()?;

    let source = load_checkpoint(&args.model)?;
    let dataset = load_dataset(&args.data, &config.dataset)?;
    check_subject(&dataset, &args.subject)?;
    let names: Vec<&str> = dataset.labels.iter().map(|l| l.name.as_str()).collect();
    let model_names: Vec<&str> = source.labels.iter().map(|l| l.name.as_str()).collect();
    if names != model_names {
        return Err(HarError::Data(format!(
            "dataset labels {names:?} do not match the checkpoint's {model_names:?}"
        ))
        .into());
    }

    let target = dataset.subject_segments(&args.subject);
    let split = sample_transfer_instances(&target, &dataset.labels, spec.k, spec.seed)?;
    let frozen = freeze_all_but_classifier(source);
    let tuned = fine_tune(&frozen, &split, &spec)?;
    let before = score(&frozen, &split.holdout)?;
    let after = score(&tuned, &split.holdout)?;
    ensure_parent(&args.out)?;
    save_checkpoint(&tuned, &args.out)?;
    write_lock(
        &parent_dir(&args.out),
        &json!({
            "command": "transfer",
            "model": args.model,
            "dataset": {
                "kind": kind_name(args.data.dataset),
                "path": args.data.data,
                "window": config.dataset.window,
                "stride": config.dataset.stride,
            },
            "subject": args.subject,
            "transfer": spec,
        }),
    )?;
    Ok(format!(
        "transfer: subject {}, {} transfer instances, {} holdout, accuracy before {:.4}, after {:.4} -> {}",
        args.subject,
        split.transfer.len(),
        split.holdout.len(),
        before.accuracy,
        after.accuracy,
        args.out.display()
    ))
}

pub fn loso(args: &LosoArgs) -> CmdResult {
    let mut config = RunConfig::load(args.config.as_deref())?;
    if let Some(list) = &args.variants {
        config.variants = list
            .iter()
            .map(|v| v.trim().parse::<Variant>())
            .collect::<har_core::Result<Vec<_>>>()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(n) = args.seeds {
        if n == 0 {
            return Err(CliError::Usage("--seeds must be at least 1".into()));
        }
        config.seeds = (0..n).collect();
    }
    if args.parallel == 0 {
        return Err(CliError::Usage("--parallel must be at least 1".into()));
    }

    let dataset = load_dataset(&args.data, &config.dataset)?;
    let network = config
        .network
        .resolve(dataset.num_channels(), dataset.window(), dataset.labels.len());
    let plan = ExperimentPlan {
        network,
        transfer: config.transfer,
        baseline: config.baseline,
        variants: config.variants.clone(),
        seeds: config.seeds.clone(),
        parallelism: args.parallel,
    };
    let report = run_experiment(&dataset, &plan)?;
    ensure_parent(&args.report)?;
    let md = args.report.with_extension("md");
    export_report(&report, &args.report, &md)?;
    write_lock(
        &parent_dir(&args.report),
        &json!({
            "command": "loso",
            "dataset": {
                "kind": kind_name(args.data.dataset),
                "path": args.data.data,
                "window": config.dataset.window,
                "stride": config.dataset.stride,
            },
            "config": config,
            "plan": plan,
            "config_digest": report.config_digest,
        }),
    )?;

    let means: Vec<String> = report
        .summary()
        .iter()
        .map(|s| format!("{} {:.4}", s.variant, s.mean_accuracy))
        .collect();
    Ok(format!(
        "loso: {} subjects, {} rows, mean accuracy {} -> {}",
        dataset.subjects.len(),
        report.rows.len(),
        means.join(", "),
        args.report.display()
    ))
}

pub fn evaluate(args: &EvaluateArgs) -> CmdResult {
    let config = RunConfig::load(args.config.as_deref())?;
    let model = load_checkpoint(&args.model)?;
    let dataset = load_dataset(&args.data, &config.dataset)?;
    let segments = match &args.subject {
        Some(s) => {
            check_subject(&dataset, s)?;
            dataset.subject_segments(s)
        }
        None => dataset.segments.clone(),
    };
    let e = score(&model, &segments)?;
    Ok(format!(
        "evaluate: {} segments, accuracy {:.4}, macro_f1 {:.4}",
        segments.len(),
        e.accuracy,
        e.macro_f1
    ))
}

pub fn report(args: &ReportArgs) -> CmdResult {
    let text = fs::read_to_string(&args.input).map_err(|e| io_err(&args.input, e))?;
    let rows = parse_csv(&text)?;
    let dataset = rows.first().map(|r| r.dataset.clone()).unwrap_or_default();
    let summary = summarize(&rows);
    ensure_parent(&args.out)?;
    fs::write(&args.out, to_markdown(&dataset, &summary)).map_err(|e| io_err(&args.out, e))?;
    Ok(format!(
        "report: {} rows, {} variants -> {}",
        rows.len(),
        summary.len(),
        args.out.display()
    ))
}
