use std::fs;
use std::path::{Path, PathBuf};

use foundpad::data::AugmentationConfig;
use foundpad::lora::AdapterConfig;
use foundpad::metrics::ThresholdPolicy;
use foundpad::train::TrainConfig;
use foundpad::vit::EncoderConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Either a preset name (`"toy"`, `"vit-b"`, `"vit-l"`) or a full encoder
/// description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EncoderSpec {
    Preset(String),
    Custom(EncoderConfig),
}

impl EncoderSpec {
    pub fn resolve(&self) -> foundpad::Result<EncoderConfig> {
        let cfg = match self {
            EncoderSpec::Preset(name) => EncoderConfig::preset(name)?,
            EncoderSpec::Custom(cfg) => cfg.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset_name(&self) -> Option<String> {
        match self {
            EncoderSpec::Preset(name) => Some(name.clone()),
            EncoderSpec::Custom(_) => None,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub encoder: EncoderSpec,
    #[serde(default)]
    pub adapter: AdapterConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
    /// JSON-Lines manifests; relative paths are taken from the config file's
    /// directory.
    #[serde(default)]
    pub manifests: Vec<PathBuf>,
    /// Protocol name such as `"D1&D2→D3"`; restricts training to its source
    /// domains.
    #[serde(default)]
    pub protocol: Option<String>,
    /// Frozen encoder for `fe` and `foundpad` runs.
    #[serde(default)]
    pub base_checkpoint: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub policy: ThresholdPolicy,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| foundpad::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::parse(&text)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        cfg.manifests.iter_mut().for_each(rebase);
        cfg.base_checkpoint.iter_mut().for_each(rebase);
        rebase(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> foundpad::Result<()> {
        let encoder = self.encoder.resolve()?;
        self.train.validate()?;
        self.augmentation.validate()?;
        if self.train.mode == foundpad::train::TrainMode::Foundpad {
            self.adapter.validate(&encoder)?;
        }
        Ok(())
    }
}
