//! Experiment configuration file: a flat JSON document whose keys mirror the
//! `train` subcommand's flag names. Unknown keys are rejected.

use oswatch::{Error, Result};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentConfig {
    pub loss: Option<String>,
    pub margin: Option<f64>,
    pub xi: Option<f64>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub seed: Option<u64>,
    pub h1: Option<usize>,
    pub h2: Option<usize>,
    pub val_every: Option<usize>,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub gallery: Option<PathBuf>,
    pub probe: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(&name, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{name}: {e}")))
    }
}
