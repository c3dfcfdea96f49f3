use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wsod_core::cam::CamConfig;
use wsod_core::labels::RefineConfig;
use wsod_core::{ThresholdPolicy, TrainConfig};

use crate::CliError;

/// Synthetic corpus shape for `gen-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub count: usize,
    pub num_categories: usize,
    pub max_shapes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { count: 150, num_categories: 4, max_shapes: 3 }
    }
}

/// Default locations of the staged artifacts; flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    pub data_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub classifier_dir: Option<PathBuf>,
    pub cam_dir: Option<PathBuf>,
    pub label_dir: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// Everything a subcommand may read from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
    pub cam: CamConfig,
    pub refine: RefineConfig,
    pub policy: ThresholdPolicy,
    pub paths: PathConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }
}

/// `flag`, else the configured path, else a configuration error naming both.
pub fn pick(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| CliError::Config(format!("no {what}: pass the flag or set it under `paths` in --config")))
}
