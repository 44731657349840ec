//! Checkpoint directory: `manifest.json` (model config, parameter names and
//! shapes, optimizer-state presence, checksums), `params.f64` (all parameter
//! values, little-endian, manifest order) and optionally `adam_state.f64`
//! (first moments then second moments, same order).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use qst_core::dataset::{crc64, f64_bytes, f64_from_bytes};
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::AdamState;

pub const FORMAT_NAME: &str = "qst-checkpoint";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.f64";
pub const ADAM_FILE: &str = "adam_state.f64";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    format_version: u32,
    model: ModelConfig,
    params: Vec<ParamEntry>,
    optimizer_state: bool,
    adam_step: u64,
    checksums: BTreeMap<String, String>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: Option<AdamState>,
    /// Free-form run information stored alongside the weights.
    pub meta: serde_json::Value,
}

pub fn save_checkpoint(
    dir: &Path,
    model: &Model,
    adam: Option<&AdamState>,
    meta: &serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut checksums = BTreeMap::new();
    let params = f64_bytes(&model.params().flat_values());
    fs::write(dir.join(PARAMS_FILE), &params)?;
    checksums.insert(PARAMS_FILE.to_string(), format!("{:016x}", crc64(&params)));
    match adam {
        Some(state) => {
            let bytes = f64_bytes(&state.flat());
            fs::write(dir.join(ADAM_FILE), &bytes)?;
            checksums.insert(ADAM_FILE.to_string(), format!("{:016x}", crc64(&bytes)));
        }
        None => {
            if dir.join(ADAM_FILE).exists() {
                fs::remove_file(dir.join(ADAM_FILE))?;
            }
        }
    }
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        format_version: FORMAT_VERSION,
        model: model.config(),
        params: model
            .params()
            .iter()
            .map(|(_, p)| ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec() })
            .collect(),
        optimizer_state: adam.is_some(),
        adam_step: adam.map_or(0, |a| a.step),
        checksums,
        meta: meta.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

fn read_checked(dir: &Path, name: &str, checksums: &BTreeMap<String, String>) -> Result<Vec<f64>> {
    let bytes = fs::read(dir.join(name))?;
    let expected = checksums
        .get(name)
        .ok_or_else(|| NnError::Format(format!("manifest has no checksum for {name}")))?;
    let actual = format!("{:016x}", crc64(&bytes));
    if !expected.eq_ignore_ascii_case(&actual) {
        return Err(NnError::Checksum(format!("{name}: manifest says {expected}, file hashes to {actual}")));
    }
    Ok(f64_from_bytes(&bytes)?)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| NnError::Format(format!("{MANIFEST_FILE}: {e}")))?;
    if manifest.format != FORMAT_NAME || manifest.format_version != FORMAT_VERSION {
        return Err(NnError::Format(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.format_version
        )));
    }
    let mut model = Model::new(&manifest.model)?;
    let layout_matches = model.params().len() == manifest.params.len()
        && model
            .params()
            .iter()
            .zip(&manifest.params)
            .all(|((_, p), e)| p.name == e.name && p.value.shape() == e.shape.as_slice());
    if !layout_matches {
        return Err(NnError::ShapeMismatch(
            "parameter names or shapes differ from the model configuration".into(),
        ));
    }
    let values = read_checked(dir, PARAMS_FILE, &manifest.checksums)?;
    model.params_mut().load_flat_values(&values)?;
    let adam = if manifest.optimizer_state {
        let flat = read_checked(dir, ADAM_FILE, &manifest.checksums)?;
        Some(AdamState::from_flat(model.params(), manifest.adam_step, &flat)?)
    } else {
        None
    };
    Ok(Checkpoint { model, adam, meta: manifest.meta })
}
