use std::fs;
use std::path::Path;

use cpseg::data::PhantomDatasetConfig;
use cpseg::inference::InferenceConfig;
use cpseg::metrics::AsdMode;
use cpseg::network::ModelConfig;
use cpseg::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub asd: AsdMode,
    /// Write a surface error map per case.
    pub error_maps: bool,
}

/// Everything a run depends on. Missing sections and fields take defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives model initialization, training randomness and phantom seeds.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: PhantomDatasetConfig,
    pub inference: InferenceConfig,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<RunConfig> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::usage(format!("{}: {}", path.display(), e.message)))
    }

    /// Pushes the run seed into the sections that carry their own copy and
    /// validates the result.
    pub fn resolve(mut self, seed: Option<u64>) -> CliResult<RunConfig> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if i64::try_from(self.seed).is_err() {
            return Err(CliError::usage(format!("seed {} does not fit in a signed 64-bit integer", self.seed)));
        }
        self.train.seed = self.seed;
        self.data.seed = self.seed;
        self.model.widths()?;
        self.train.validate()?;
        self.inference.validate()?;
        self.model.check_input([self.train.patch_size; 3])?;
        self.model.check_input([self.inference.patch_size; 3])?;
        Ok(self)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::usage(format!("serializing config: {e}")))
    }

    /// Writes the resolved configuration as `config.toml` in `dir`.
    pub fn write_next_to(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join("config.toml");
        fs::write(&path, self.to_toml()?).map_err(|e| CliError::io(&path, e))
    }
}
