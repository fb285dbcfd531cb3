//! The deployable model: both generator modules plus the attribute
//! classifiers, stored together in one checkpoint with their architecture.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tch::Tensor;

use crate::checkpoint::{self, restore_var_store, var_store_entries};
use crate::networks::layers::parameter_hash;
use crate::networks::{AgeClassifier, AttributeNet, GenderClassifier, InheritanceNet, NetConfig};
use crate::{Error, Result};

pub const FORMAT: &str = "kinsynth-checkpoint/1";

/// JSON header stored in every checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub net: NetConfig,
    pub model_id: String,
    /// Training state (present in trainer checkpoints).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<serde_json::Value>,
}

#[derive(Debug)]
pub struct ModelBundle {
    pub config: NetConfig,
    pub inheritance: InheritanceNet,
    pub attribute: AttributeNet,
    pub age: AgeClassifier,
    pub gender: GenderClassifier,
}

impl ModelBundle {
    /// Freshly initialised networks; each gets its own stream of `seed`.
    pub fn new(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(ModelBundle {
            config: config.clone(),
            inheritance: InheritanceNet::new(config, seed)?,
            attribute: AttributeNet::new(config, seed.wrapping_add(1))?,
            age: AgeClassifier::new(config, seed.wrapping_add(2))?,
            gender: GenderClassifier::new(config, seed.wrapping_add(3))?,
        })
    }

    pub fn entries(&self) -> Vec<(String, Tensor)> {
        let mut out = var_store_entries("inh", self.inheritance.var_store());
        out.extend(var_store_entries("att", self.attribute.var_store()));
        out.extend(var_store_entries("age", self.age.var_store()));
        out.extend(var_store_entries("gender", self.gender.var_store()));
        out
    }

    pub fn restore(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        restore_var_store("inh", self.inheritance.var_store(), tensors)?;
        restore_var_store("att", self.attribute.var_store(), tensors)?;
        restore_var_store("age", self.age.var_store(), tensors)?;
        restore_var_store("gender", self.gender.var_store(), tensors)
    }

    /// Short content hash over the generator weights.
    pub fn model_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(parameter_hash(self.inheritance.var_store()));
        h.update(parameter_hash(self.attribute.var_store()));
        format!("{:x}", h.finalize())[..16].to_string()
    }

    pub fn meta(&self, training: Option<serde_json::Value>) -> CheckpointMeta {
        CheckpointMeta {
            format: FORMAT.to_string(),
            net: self.config.clone(),
            model_id: self.model_id(),
            training,
        }
    }

    /// Saves only the deployable networks.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.meta(None), &self.entries())
    }

    /// Loads a model or trainer checkpoint.
    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let contents = checkpoint::load(path)?;
        let meta: CheckpointMeta = serde_json::from_value(contents.meta)?;
        if meta.format != FORMAT {
            return Err(Error::Incompatible(format!("unknown checkpoint format {:?}", meta.format)));
        }
        let bundle = ModelBundle::new(&meta.net, 0)?;
        bundle.restore(&contents.tensors)?;
        Ok((bundle, meta))
    }

    /// Like [`ModelBundle::load`] but rejects checkpoints for another canvas.
    pub fn load_for_canvas(path: &Path, canvas: usize) -> Result<(Self, CheckpointMeta)> {
        let contents = checkpoint::load(path)?;
        let meta: CheckpointMeta = serde_json::from_value(contents.meta.clone())?;
        if meta.net.canvas != canvas {
            return Err(Error::Incompatible(format!(
                "checkpoint was trained for a {0}×{0} canvas, current configuration uses {1}×{1}",
                meta.net.canvas, canvas
            )));
        }
        Self::load(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = NetConfig::desk(64);
        let m = ModelBundle::new(&cfg, 5).unwrap();
        m.save(&path).unwrap();
        let (back, meta) = ModelBundle::load(&path).unwrap();
        assert_eq!(meta.net, cfg);
        assert_eq!(back.model_id(), m.model_id());
        assert_eq!(
            parameter_hash(back.age.var_store()),
            parameter_hash(m.age.var_store())
        );
        assert!(matches!(
            ModelBundle::load_for_canvas(&path, 128),
            Err(Error::Incompatible(_))
        ));
        assert!(ModelBundle::load_for_canvas(&path, 64).is_ok());
    }
}
