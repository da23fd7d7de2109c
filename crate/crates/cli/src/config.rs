use std::path::Path;

use orthoseis::baseline::BpiConfig;
use orthoseis::net::NetworkConfig;
use orthoseis::seismic::{DatasetSpec, Snr};
use orthoseis::tensor::RngState;
use orthoseis::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

/// Artifact and data-plumbing settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    /// Noise variant the network trains and validates on.
    pub train_level: Snr,
    /// Patch stride for inference on whole sections; `null` means no overlap.
    pub patch_stride: Option<(usize, usize)>,
    /// Write PGM images next to predicted grids.
    pub export_images: bool,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            train_level: Snr::CLEAN,
            patch_stride: None,
            export_images: true,
        }
    }
}

/// The full run description read from `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed. When set, `dataset.seed`, `train.seed` and `init_seed`
    /// are derived from it.
    pub seed: Option<u64>,
    /// Seed for network weight initialization.
    pub init_seed: u64,
    pub dataset: DatasetSpec,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub baseline: BpiConfig,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            init_seed: 0,
            dataset: DatasetSpec::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            baseline: BpiConfig::default(),
            io: IoConfig::default(),
        }
    }
}

/// Labels for the per-subsystem seed streams.
const DATASET_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;

pub fn derive_seed(root: u64, stream: u64) -> u64 {
    RngState::new(root).fork(stream).next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: Option<u64>,
    pub dataset: u64,
    pub train: u64,
    pub init: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies a command-line root seed, derives subsystem seeds and validates.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self> {
        if seed.is_some() {
            self.seed = seed;
        }
        if let Some(root) = self.seed {
            self.dataset.seed = derive_seed(root, DATASET_STREAM);
            self.train.seed = derive_seed(root, TRAIN_STREAM);
            self.init_seed = derive_seed(root, INIT_STREAM);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        self.baseline.validate()?;
        if self.network.input_size != self.dataset.patch_size {
            return Err(CliError::Config(format!(
                "network.input_size {:?} must equal dataset.patch_size {:?}",
                self.network.input_size, self.dataset.patch_size
            )));
        }
        if !self.dataset.snr_db_list.contains(&self.io.train_level) {
            return Err(CliError::Config(format!(
                "io.train_level {} is not in dataset.snr_db_list",
                self.io.train_level.label()
            )));
        }
        if let Some((a, b)) = self.io.patch_stride {
            if a == 0 || b == 0 {
                return Err(CliError::Config("io.patch_stride must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            root: self.seed,
            dataset: self.dataset.seed,
            train: self.train.seed,
            init: self.init_seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Every config key with its default, one `key = value` per line.
pub fn config_keys_help() -> String {
    let v = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let mut keys = Vec::new();
    flatten("", &v, &mut keys);
    let width = keys.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (JSON, dotted path = default):\n");
    for (k, v) in keys {
        out += &format!("  {k:<width$}  {v}\n");
    }
    out
}
