use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use llp_core::pipeline::{BaselineReport, IterationReport, PipelineConfig};
use serde::{Deserialize, Serialize};

/// Everything needed to repeat a run, plus what it reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub data: DataSpec,
    pub seeds: Seeds,
    pub config: PipelineConfig,
    #[serde(default)]
    pub reports: Vec<IterationReport>,
    #[serde(default)]
    pub baseline: Option<BaselineReport>,
    /// Set when the run aborted; `reports` then holds finished iterations.
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSpec {
    pub path: PathBuf,
    pub labels_col: String,
    pub split: (f64, f64, f64),
    pub bag_size: Option<usize>,
    pub bags_dir: Option<PathBuf>,
    pub num_rows: usize,
    pub num_train: usize,
    pub num_bags: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Seeds {
    pub seed: u64,
    pub split_seed: u64,
    pub bag_seed: u64,
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        Self {
            seed,
            split_seed: seed,
            bag_seed: seed.wrapping_add(1),
        }
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
