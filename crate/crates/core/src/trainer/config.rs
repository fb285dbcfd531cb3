use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::losses::LossWeights;
use crate::networks::NetConfig;
use crate::optim::AdamConfig;
use crate::{Error, Result};

/// Where training faces come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Procedural toy faces generated in memory.
    Toy { subjects: usize, seed: u64 },
    /// A `manifest.json` on disk.
    Manifest { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkPreset {
    Desk,
    Full,
}

/// Loss groups that can be switched off for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationFlag {
    /// Adversarial terms (patch critic and attribute discriminator).
    AD,
    /// Pixel reconstruction terms.
    PI,
    /// Age and gender classification terms.
    AG,
    /// Perceptual terms.
    PE,
}

impl FromStr for AblationFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AD" => Ok(AblationFlag::AD),
            "PI" => Ok(AblationFlag::PI),
            "AG" => Ok(AblationFlag::AG),
            "PE" => Ok(AblationFlag::PE),
            other => Err(Error::validation(
                "ablation",
                format!("unknown flag {other:?}; expected AD, PI, AG or PE"),
            )),
        }
    }
}

impl fmt::Display for AblationFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Parses a comma-separated flag list such as `AD,PE`.
pub fn parse_ablation(text: &str) -> Result<Vec<AblationFlag>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierPretrain {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for ClassifierPretrain {
    fn default() -> Self {
        ClassifierPretrain {
            iterations: 400,
            batch_size: 32,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributePretrain {
    pub iterations: u64,
    /// Learning rate of the attribute module and its discriminator, in
    /// pretraining and in the joint updates; `None` uses the main rate.
    pub lr: Option<f64>,
}

impl Default for AttributePretrain {
    fn default() -> Self {
        AttributePretrain {
            iterations: 2000,
            lr: Some(1e-3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub run_id: String,
    pub runs_dir: PathBuf,
    pub canvas: usize,
    pub network: NetworkPreset,
    pub batch_size: usize,
    /// Joint iterations.
    pub iterations: u64,
    /// One attribute-module update every `attribute_period` joint iterations.
    pub attribute_period: u64,
    pub critic_steps: usize,
    pub seed: u64,
    /// Joint-phase checkpoint interval; 0 disables intermediate checkpoints.
    pub checkpoint_interval: u64,
    pub optimizer: AdamConfig,
    pub weights: LossWeights,
    pub dataset: DatasetSource,
    pub classifier: ClassifierPretrain,
    pub attribute_pretrain: AttributePretrain,
    pub color_correct: bool,
    /// Draw the decoder noise map from N(0, 1) during training.
    pub decoder_noise: bool,
    pub ablation: Vec<AblationFlag>,
    /// Pretrained full-width VGG19 feature weights; a fixed random extractor
    /// is used when absent.
    pub perceptual_weights: Option<PathBuf>,
    /// Run batch compositing on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            run_id: "toy".into(),
            runs_dir: "runs".into(),
            canvas: 64,
            network: NetworkPreset::Desk,
            batch_size: 8,
            iterations: 3000,
            attribute_period: 500,
            critic_steps: 5,
            seed: 7,
            checkpoint_interval: 1000,
            optimizer: AdamConfig::default(),
            weights: LossWeights::default(),
            dataset: DatasetSource::Toy { subjects: 512, seed: 1 },
            classifier: ClassifierPretrain::default(),
            attribute_pretrain: AttributePretrain::default(),
            color_correct: true,
            decoder_noise: true,
            ablation: Vec::new(),
            perceptual_weights: None,
            parallel: true,
        }
    }
}

impl TrainConfig {
    /// Reads a `.toml` or `.json` run config.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if self.attribute_period == 0 {
            return Err(Error::validation("attribute_period", "must be positive"));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(Error::validation("run_id", "must be a non-empty file name"));
        }
        self.optimizer.validate()?;
        self.weights.validate()?;
        self.net_config().validate()
    }

    pub fn net_config(&self) -> NetConfig {
        match self.network {
            NetworkPreset::Desk => NetConfig::desk(self.canvas),
            NetworkPreset::Full => NetConfig {
                canvas: self.canvas,
                ..NetConfig::full()
            },
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.runs_dir.join(&self.run_id)
    }

    pub fn has(&self, flag: AblationFlag) -> bool {
        self.ablation.contains(&flag)
    }
}

/// Number of attribute-module updates after `n` joint iterations with
/// period `p`: updates happen at iterations p, 2p, ...
pub fn attribute_updates_after(n: u64, p: u64) -> u64 {
    n / p
}

/// Whether joint iteration `t` (1-based) carries an attribute update.
pub fn is_attribute_iteration(t: u64, p: u64) -> bool {
    t > 0 && t % p == 0
}
