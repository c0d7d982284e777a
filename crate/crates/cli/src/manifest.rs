use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use loster::augment::AugmentConfig;
use loster::concrete::ClusterConfig;
use loster::dataio::RESULTS_SCHEMA_VERSION;
use loster::densenet::CHECKPOINT_VERSION;
use loster::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "loster-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// Everything needed to rerun a command with the same result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub format_version: u32,
    pub tool_version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config_file: Option<PathBuf>,
    pub train: Option<TrainConfig>,
    pub augment: Option<AugmentConfig>,
    pub cluster: Option<ClusterConfig>,
    pub dataset_paths: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub results_schema_version: u32,
    pub checkpoint_version: u32,
}

impl RunManifest {
    pub fn new(command: &str, output_dir: &Path, seed: u64, threads: usize) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            format_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: std::env::args().collect(),
            config_file: None,
            train: None,
            augment: None,
            cluster: None,
            dataset_paths: Vec::new(),
            output_dir: output_dir.to_path_buf(),
            seed,
            threads,
            results_schema_version: RESULTS_SCHEMA_VERSION,
            checkpoint_version: CHECKPOINT_VERSION,
        }
    }

    pub fn with_train(mut self, train: &TrainConfig, k: Option<usize>) -> Self {
        self.augment = Some(train.augment.clone());
        self.cluster = k.map(|k| train.cluster_config(k));
        self.train = Some(train.clone());
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
