use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tcl_core::trainer::{Mode, TrainConfig};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const ANALYSIS_DIR: &str = "analysis";

/// Artifact locations relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub config: PathBuf,
    pub metrics: PathBuf,
    /// Rewritten at every evaluation interval and at the end of training.
    pub checkpoint: PathBuf,
    /// Per-interval copies, present when kept.
    pub checkpoints: Option<PathBuf>,
    pub embeddings: PathBuf,
}

/// Everything needed to reproduce a run. Written once, before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub mode: Mode,
    pub seed: u64,
    pub start_step: u64,
    /// Environment-step count at which training will stop.
    pub end_step: u64,
    pub config: TrainConfig,
    pub artifacts: Artifacts,
}

impl RunManifest {
    pub fn new(config: &TrainConfig, keep_checkpoints: bool) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            mode: config.mode,
            seed: config.seed,
            start_step: 0,
            end_step: planned_end_step(config),
            config: config.clone(),
            artifacts: Artifacts {
                config: CONFIG_FILE.into(),
                metrics: METRICS_FILE.into(),
                checkpoint: CHECKPOINT_FILE.into(),
                checkpoints: keep_checkpoints.then(|| CHECKPOINT_DIR.into()),
                embeddings: ANALYSIS_DIR.into(),
            },
        }
    }

    /// Creates `dir/manifest.json`, refusing to replace an existing one.
    pub fn write_new(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut json = serde_json::to_string_pretty(self).expect("manifests serialize");
        json.push('\n');
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(CliError::io(&path))?;
        f.write_all(json.as_bytes()).map_err(CliError::io(&path))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(CliError::io(&path))?;
        serde_json::from_str(&text).map_err(|e| CliError::format(&path)(e.to_string()))
    }
}

/// Warmup plus every collection phase that fits in the budget.
pub fn planned_end_step(config: &TrainConfig) -> u64 {
    let warmup = config.warmup_cost();
    let cost = config.collection_cost();
    let phases = if cost == 0 {
        0
    } else {
        config.env_step_budget.saturating_sub(warmup) / cost
    };
    warmup + phases * cost
}
