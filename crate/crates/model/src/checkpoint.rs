//! A checkpoint is a directory holding `config.json` and
//! `weights.safetensors`.

use std::collections::HashMap;
use std::path::Path;

use candle::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::model::FidModel;

pub const FORMAT_VERSION: u32 = 1;
const CONFIG_FILE: &str = "config.json";
const WEIGHTS_FILE: &str = "weights.safetensors";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn save_checkpoint(model: &FidModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
    };
    let config_path = dir.join(CONFIG_FILE);
    let json = serde_json::to_string_pretty(&header).expect("config serializes");
    std::fs::write(&config_path, json).map_err(io(&config_path))?;
    let tensors: HashMap<String, Tensor> = model
        .vars()
        .iter()
        .map(|(name, var)| (name.clone(), var.as_tensor().clone()))
        .collect();
    candle::safetensors::save(&tensors, dir.join(WEIGHTS_FILE))?;
    Ok(())
}

pub fn load_config(dir: &Path) -> Result<ModelConfig> {
    let path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&path).map_err(io(&path))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| bad(&path, e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(
            &path,
            format!("unsupported format version {}", header.format_version),
        ));
    }
    Ok(header.config)
}

/// Loads into a model of the given dtype; weights are converted if they were
/// saved in another precision.
pub fn load_checkpoint(dir: &Path, dtype: DType, device: &Device) -> Result<FidModel> {
    let config = load_config(dir)?;
    let model = FidModel::new(&config, dtype, device)?;
    let path = dir.join(WEIGHTS_FILE);
    if !path.exists() {
        return Err(bad(&path, "missing weights file"));
    }
    let tensors = candle::safetensors::load(&path, device)?;
    if tensors.len() != model.vars().len() {
        return Err(bad(
            &path,
            format!("expected {} tensors, found {}", model.vars().len(), tensors.len()),
        ));
    }
    for (name, var) in model.vars() {
        let t = tensors
            .get(name)
            .ok_or_else(|| bad(&path, format!("missing tensor {name}")))?;
        if t.shape() != var.shape() {
            return Err(bad(
                &path,
                format!("tensor {name} has shape {:?}, expected {:?}", t.dims(), var.dims()),
            ));
        }
        var.set(&t.to_dtype(dtype)?)?;
    }
    Ok(model)
}
