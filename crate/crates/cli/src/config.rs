//! Experiment configuration: a TOML file provides defaults, command-line
//! flags override individual values, and every command persists the fully
//! resolved configuration it ran with.

use std::path::{Path, PathBuf};

use radcycle_core::{Error as CoreError, Result as CoreResult};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Synthetic 64x64 shape dataset; minutes of CPU training.
    Toy,
    /// Published hyperparameters; expects the real collection layout.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub split: u64,
    pub report: u64,
    pub image: u64,
    pub cycle: u64,
    pub classifier: u64,
    pub protocol: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            data: 0,
            split: 0,
            report: 0,
            image: 0,
            cycle: 0,
            classifier: 17,
            protocol: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n: usize,
    pub ratio: f64,
    pub min_freq: usize,
    pub frontal_only: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            n: 250,
            ratio: 0.8,
            min_freq: 1,
            frontal_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub report_epochs: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub cycle_epochs: usize,
    pub lambda_cycle_image: f64,
    pub lambda_cycle_text: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            report_epochs: 25,
            stage1_epochs: 30,
            stage2_epochs: 8,
            cycle_epochs: 10,
            lambda_cycle_image: 10.0,
            lambda_cycle_text: 1.0,
        }
    }
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub seeds: Seeds,
    pub data: DataSection,
    pub train: TrainSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            profile: Profile::Toy,
            seeds: Seeds::default(),
            data: DataSection::default(),
            train: TrainSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CoreResult<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::Io { path: path.to_path_buf(), source: e })?;
        toml::from_str(&text).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> CoreResult<()> {
        if !(self.data.ratio > 0.0 && self.data.ratio < 1.0) {
            return Err(CoreError::Config(format!(
                "data.ratio {} outside (0,1)",
                self.data.ratio
            )));
        }
        if self.data.n < 2 {
            return Err(CoreError::Config("data.n must be >= 2".into()));
        }
        if self.data.min_freq < 1 {
            return Err(CoreError::Config("data.min_freq must be >= 1".into()));
        }
        if self.train.lambda_cycle_image < 0.0 || self.train.lambda_cycle_text < 0.0 {
            return Err(CoreError::Config("cycle weights must be >= 0".into()));
        }
        if self.train.lambda_cycle_image == 0.0 && self.train.lambda_cycle_text == 0.0 {
            return Err(CoreError::Config(
                "at least one cycle weight must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Writes the resolved configuration next to a command's outputs.
    pub fn persist(&self, dir: &Path) -> CoreResult<PathBuf> {
        let path = dir.join("config.toml");
        let text = toml::to_string_pretty(self)
            .map_err(|e| CoreError::Config(format!("config serialization: {e}")))?;
        std::fs::write(&path, text)
            .map_err(|e| CoreError::Io { path: path.clone(), source: e })?;
        Ok(path)
    }
}
