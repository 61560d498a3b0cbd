//! Run configuration files and the `config.lock.json` echo.

use std::fs;
use std::path::Path;

use har_core::eval::{LrOptions, Variant};
use har_core::{AdamConfig, ConvBlock, HarError, NetworkConfig, TransferSpec};
use serde::{Deserialize, Serialize};

pub const LOCK_FILE: &str = "config.lock.json";

/// Windowing for stream formats (WISDM, CSV directories). Unset fields
/// fall back to the format's own defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub window: Option<usize>,
    pub stride: Option<usize>,
}

/// Everything in [`NetworkConfig`] except the geometry, which comes from
/// the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub bins: usize,
    pub embedding_dim: usize,
    pub blocks: Vec<ConvBlock>,
    pub smooth_width: usize,
    pub clip_percentiles: (f64, f64),
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let n = NetworkConfig::new(3, 200, 2);
        NetworkSection {
            bins: n.bins,
            embedding_dim: n.embedding_dim,
            blocks: n.blocks,
            smooth_width: n.smooth_width,
            clip_percentiles: n.clip_percentiles,
            optimizer: n.optimizer,
            epochs: n.epochs,
            batch_size: n.batch_size,
            seed: n.seed,
        }
    }
}

impl NetworkSection {
    pub fn resolve(&self, input_channels: usize, window: usize, classes: usize) -> NetworkConfig {
        NetworkConfig {
            input_channels,
            window,
            classes,
            bins: self.bins,
            embedding_dim: self.embedding_dim,
            blocks: self.blocks.clone(),
            smooth_width: self.smooth_width,
            clip_percentiles: self.clip_percentiles,
            optimizer: self.optimizer,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub network: NetworkSection,
    pub transfer: TransferSpec,
    pub baseline: LrOptions,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSection::default(),
            network: NetworkSection::default(),
            transfer: TransferSpec::default(),
            baseline: LrOptions::default(),
            seeds: (0..5).collect(),
            variants: Variant::ALL.to_vec(),
        }
    }
}

impl RunConfig {
    /// Reads a JSON config; every field is optional and unknown keys are
    /// rejected.
    pub fn load(path: Option<&Path>) -> har_core::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| HarError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| HarError::Config(format!("{}: {e}", path.display())))
    }
}

/// Writes `value` as pretty JSON to `dir/config.lock.json`.
pub fn write_lock<T: Serialize>(dir: &Path, value: &T) -> har_core::Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let path = dir.join(LOCK_FILE);
    let json = serde_json::to_string_pretty(value).expect("config serializes");
    fs::write(&path, json + "\n").map_err(|e| HarError::Io { path, source: e })
}
