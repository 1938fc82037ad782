//! Experiment configuration, read from a TOML file.

use std::fs;
use std::path::{Path, PathBuf};

use lfsr_core::metrics::Aggregation;
use lfsr_core::{Error, NetworkConfig, Result, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds every training run; overrides the per-stage `train.seed`.
    pub seed: u64,
    /// Root of every artifact the pipeline writes.
    pub out: PathBuf,
    pub data: DataConfig,
    pub angular: StageConfig,
    pub spatial: SpatialStageConfig,
    pub evaluate: EvalConfig,
    pub sweep: SweepConfig,
}

/// Explicit container lists; directory order is never consulted.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialStageConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Perspectives `[u, v]` to train when `--keys` is not given.
    pub keys: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Perspectives `[u, v]` to score; empty means all.
    pub perspectives: Vec<[usize; 2]>,
    /// How reports over several light fields are combined.
    pub aggregation: Aggregation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            perspectives: Vec::new(),
            aggregation: Aggregation::PerImage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Steps between PSNR evaluations.
    pub eval_interval: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { eval_interval: 500 }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("lfsr-out"),
            data: DataConfig::default(),
            angular: StageConfig::default(),
            spatial: SpatialStageConfig::default(),
            evaluate: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies the top-level seed to both stages.
    pub fn resolve(mut self) -> Self {
        self.angular.train.seed = self.seed;
        self.spatial.train.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.angular.train.validate()?;
        self.spatial.train.validate()?;
        if self.sweep.eval_interval == 0 {
            return Err(Error::Config("sweep.eval_interval must be at least 1".into()));
        }
        Ok(())
    }

    /// Checks that every listed container exists.
    pub fn validate_data(&self) -> Result<()> {
        if self.data.train.is_empty() && self.data.test.is_empty() {
            return Err(Error::Config("data.train and data.test are both empty".into()));
        }
        for p in self.data.train.iter().chain(&self.data.test) {
            if !p.is_dir() {
                return Err(Error::Config(format!("data path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn perspectives(&self) -> Option<Vec<(usize, usize)>> {
        if self.evaluate.perspectives.is_empty() {
            None
        } else {
            Some(self.evaluate.perspectives.iter().map(|&[u, v]| (u, v)).collect())
        }
    }
}
