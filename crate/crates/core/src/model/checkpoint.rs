//! Checkpoints: parameters in a tensor container plus a JSON index holding
//! the model configuration and the parameter table.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::data::tensor_io::{read_tensors, write_tensors, AnyTensor};
use crate::error::{Error, Result};
use crate::tensor::{DType, Element};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub config: ModelConfig,
    pub params: Vec<ParamEntry>,
}

/// The JSON index sitting next to a `.s2s` parameter file.
pub fn index_path(params: &Path) -> PathBuf {
    params.with_extension("json")
}

/// Write `path` (parameters) and its sibling index.
pub fn save_checkpoint<T: Element>(model: &Model<T>, path: &Path) -> Result<()>
where
    AnyTensor: From<crate::tensor::Tensor<T>>,
{
    let entries: Vec<(String, AnyTensor)> = model
        .store
        .iter()
        .map(|(name, t)| (name.to_string(), AnyTensor::from(t.clone())))
        .collect();
    let index = CheckpointIndex {
        config: model.config.clone(),
        params: model
            .store
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                dtype: T::DTYPE,
            })
            .collect(),
    };
    write_tensors(path, &entries)?;
    let ipath = index_path(path);
    let json = serde_json::to_string_pretty(&index)?;
    std::fs::write(&ipath, json + "\n").map_err(|e| Error::io(&ipath, e))
}

/// Rebuild the architecture from the index and fill every parameter by
/// name. Missing, extra or mis-shaped tensors are errors.
pub fn load_checkpoint<T: Element>(path: &Path) -> Result<Model<T>> {
    let ipath = index_path(path);
    let text = std::fs::read_to_string(&ipath).map_err(|e| Error::io(&ipath, e))?;
    let index: CheckpointIndex = serde_json::from_str(&text)?;
    let mut model = Model::<T>::new(index.config, 0)?;
    let tensors = read_tensors(path)?;
    if tensors.len() != model.store.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, the configured model has {}",
            tensors.len(),
            model.store.len()
        )));
    }
    for (name, t) in tensors {
        if model.store.id(&name).is_none() {
            return Err(Error::Format(format!("checkpoint tensor `{name}` is not a model parameter")));
        }
        model.store.assign(&name, t.to::<T>())?;
    }
    Ok(model)
}
