use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cifst_core::data::SyntheticSpec;
use cifst_core::model::{ModelConfig, TrainConfig};
use cifst_core::policy::PolicyConfig;
use serde::{Deserialize, Serialize};

/// Resolved settings of one command invocation. Loaded from `--config`,
/// overridden by flags, and embedded in every artifact the command writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub command: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub paths: BTreeMap<String, PathBuf>,
}

fn default_seed() -> u64 {
    1
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            seed: default_seed(),
            data: None,
            model: None,
            train: None,
            policy: None,
            beam: None,
            paths: BTreeMap::new(),
        }
    }

    /// Starts from `file` when given, else from defaults.
    pub fn load(command: &str, file: Option<&Path>) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str::<RunConfig>(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => Self::new(command),
        };
        if !cfg.command.is_empty() && cfg.command != command {
            bail!("config was written for `{}`, not `{command}`", cfg.command);
        }
        cfg.command = command.to_string();
        Ok(cfg)
    }

    pub fn set_path(&mut self, key: &str, path: &Path) {
        self.paths.insert(key.to_string(), path.to_path_buf());
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    /// Reads the config embedded in a corpus directory.
    pub fn from_corpus(dir: &Path) -> Result<Self> {
        let path = dir.join(CORPUS_CONFIG);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("corpus config {} not found", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub const CORPUS_CONFIG: &str = "corpus.json";
