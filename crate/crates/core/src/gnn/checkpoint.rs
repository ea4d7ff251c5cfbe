//! Versioned JSON checkpoints: config, parameters and optimizer state.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GnnError, ModelConfig, Params, Result, TrainOutput};
use crate::optim::{OptimizerState, ParamSpec};
use crate::tensor::Tensor;

pub const FORMAT: &str = "ghyp-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub spec: ParamSpec,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub config: ModelConfig,
    pub feature_dim: usize,
    pub params: Vec<NamedTensor>,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn new(cfg: &ModelConfig, out: &TrainOutput, feature_dim: usize) -> Self {
        let params = (0..out.params.names.len())
            .map(|i| NamedTensor {
                name: out.params.names[i].clone(),
                spec: out.params.specs[i],
                tensor: out.params.tensors[i].clone(),
            })
            .collect();
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            config_hash: cfg.hash(),
            config: cfg.clone(),
            feature_dim,
            params,
            optimizer: out.optimizer.clone(),
        }
    }

    pub fn params(&self) -> Params {
        Params {
            names: self.params.iter().map(|p| p.name.clone()).collect(),
            tensors: self.params.iter().map(|p| p.tensor.clone()).collect(),
            specs: self.params.iter().map(|p| p.spec).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != FORMAT {
            return Err(GnnError::Checkpoint(format!(
                "not a checkpoint (format '{}')",
                c.format
            )));
        }
        if c.version != VERSION {
            return Err(GnnError::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                c.version
            )));
        }
        if c.config_hash != c.config.hash() {
            return Err(GnnError::Checkpoint(
                "config hash does not match the stored config".into(),
            ));
        }
        if c.optimizer.moments.len() != c.params.len() {
            return Err(GnnError::Checkpoint(
                "optimizer state does not cover every parameter".into(),
            ));
        }
        Ok(c)
    }

    /// Writes through a sibling temporary file and a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.to_json()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
