use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelConfig};
use crate::tensor::{ParamStore, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Everything needed to rebuild a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub model: ModelConfig,
    pub input_dim: usize,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub epoch: usize,
    pub validation_loss: f64,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn snapshot_params(store: &ParamStore) -> Vec<NamedTensor> {
        store
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                tensor: p.tensor.clone(),
            })
            .collect()
    }

    /// Rebuilds the model and copies every tensor in by name.
    pub fn restore(&self) -> Result<(Model, ParamStore)> {
        let (model, mut store) = Model::init(&self.model, self.input_dim, 0);
        if store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                store.len(),
                self.params.len()
            )));
        }
        for nt in &self.params {
            let id = store
                .find(&nt.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {}", nt.name)))?;
            let declared: usize = nt.tensor.shape().iter().product();
            if store.tensor(id).shape() != nt.tensor.shape() || nt.tensor.data().len() != declared {
                return Err(Error::Checkpoint(format!(
                    "{}: shape {:?} does not match {:?}",
                    nt.name,
                    nt.tensor.shape(),
                    store.tensor(id).shape()
                )));
            }
            store.get_mut(id).tensor = nt.tensor.clone();
        }
        Ok((model, store))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}
