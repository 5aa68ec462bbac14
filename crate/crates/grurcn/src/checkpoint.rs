//! Checkpoint directories: `manifest.json` plus one tensor file per
//! parameter, listed in the model's fixed parameter order.

use std::path::Path;

use grurcn_core::model::Model;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::config::{self, Pairs};
use crate::tensor_io::{read_tensor, write_tensor};
use crate::{Error, Result};

pub const FORMAT: &str = "grurcn-checkpoint";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub model: Pairs,
    pub parameters: Vec<ParameterEntry>,
}

pub fn save_checkpoint(dir: &Path, model: &Model) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut parameters = Vec::with_capacity(model.names().len());
    for (i, (name, t)) in model.names().iter().zip(model.tensors()).enumerate() {
        let file = format!("{i:03}_{name}.grcn");
        write_tensor(&dir.join(&file), t)?;
        parameters.push(ParameterEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        version: 1,
        model: config::model_pairs(model.config()),
        parameters,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    std::fs::write(&path, text + "\n").map_err(Error::io(&path))
}

pub fn load_checkpoint(dir: &Path) -> Result<Model> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
    if manifest.format != FORMAT || manifest.version != 1 {
        return Err(Error::format(
            &path,
            format!(
                "unsupported checkpoint {} v{}",
                manifest.format, manifest.version
            ),
        ));
    }
    let cfg = config::model_from_pairs(&manifest.model)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut model = Model::new(cfg, &mut rng)?;
    let named = manifest
        .parameters
        .iter()
        .map(|p| Ok((p.name.clone(), read_tensor(&dir.join(&p.file))?)))
        .collect::<Result<Vec<_>>>()?;
    model.load(&named).map_err(|e| Error::format(&path, e))?;
    Ok(model)
}
