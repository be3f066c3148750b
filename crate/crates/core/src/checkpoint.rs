//! Single-file checkpoints.
//!
//! Layout: one line of compact JSON (the manifest), a `\n`, then a blob of
//! little-endian `f32` values. The manifest holds the model config and, for
//! every parameter in storage order, its name, shape, frozen flag and byte
//! offset into the blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::Model;

const FORMAT: &str = "pctrack-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
    /// Byte offset of the first value in the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: Vec<ParamEntry>,
}

/// Serializes a model to checkpoint bytes.
pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut params = Vec::with_capacity(model.store.len());
    let mut blob = Vec::new();
    for (_, p) in model.store.iter() {
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            frozen: p.frozen,
            offset: blob.len(),
        });
        for v in p.value.data() {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config.clone(),
        params,
    };
    let mut out = serde_json::to_vec(&manifest).expect("manifest serializes");
    out.push(b'\n');
    out.extend_from_slice(&blob);
    out
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

fn mismatch(param: &str, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        param: param.to_string(),
        msg: msg.into(),
    }
}

/// Splits checkpoint bytes into manifest and blob.
pub fn parse(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| mismatch("<manifest>", "no manifest line"))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| mismatch("<manifest>", e.to_string()))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(mismatch(
            "<manifest>",
            format!("unsupported format {} v{}", manifest.format, manifest.version),
        ));
    }
    Ok((manifest, &bytes[nl + 1..]))
}

/// Copies checkpoint values into `model`, which must have exactly the
/// parameters the manifest lists. The first disagreement is reported by
/// parameter name.
pub fn load_into(model: &mut Model, manifest: &Manifest, blob: &[u8]) -> Result<()> {
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for (i, id) in ids.iter().enumerate() {
        let p = model.store.get(*id);
        let Some(e) = manifest.params.get(i) else {
            return Err(mismatch(&p.name, "missing from checkpoint"));
        };
        if e.name != p.name {
            return Err(mismatch(&p.name, format!("checkpoint has `{}` in its place", e.name)));
        }
        if e.shape != p.value.shape() {
            return Err(mismatch(&p.name, format!("shape {:?} vs model {:?}", e.shape, p.value.shape())));
        }
        if e.frozen != p.frozen {
            return Err(mismatch(&p.name, "frozen flag differs"));
        }
        let len = p.value.numel() * 4;
        let bytes = blob
            .get(e.offset..e.offset + len)
            .ok_or_else(|| mismatch(&p.name, "blob too short"))?;
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        model.store.get_mut(*id).value.data_mut().copy_from_slice(&values);
    }
    if let Some(extra) = manifest.params.get(ids.len()) {
        return Err(mismatch(&extra.name, "not present in the model"));
    }
    Ok(())
}

/// Rebuilds the model described by the checkpoint and loads its values.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let (manifest, blob) = parse(bytes)?;
    let mut model = Model::new(manifest.config.clone())?;
    load_into(&mut model, &manifest, blob)?;
    Ok(model)
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = Model::new(ModelConfig::tiny()).unwrap();
        let back = from_bytes(&to_bytes(&m)).unwrap();
        assert_eq!(back.store, m.store);
    }

    #[test]
    fn truncated_blob_names_parameter() {
        let m = Model::new(ModelConfig::tiny()).unwrap();
        let mut bytes = to_bytes(&m);
        bytes.truncate(bytes.len() - 4);
        match from_bytes(&bytes).unwrap_err() {
            Error::Checkpoint { param, .. } => assert_eq!(param, m.store.iter().last().unwrap().1.name),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn renamed_parameter_is_reported() {
        let m = Model::new(ModelConfig::tiny()).unwrap();
        let bytes = to_bytes(&m);
        let (mut manifest, blob) = parse(&bytes).unwrap();
        manifest.params[3].name = "bogus".into();
        let mut target = Model::new(ModelConfig::tiny()).unwrap();
        match load_into(&mut target, &manifest, blob).unwrap_err() {
            Error::Checkpoint { param, .. } => assert_eq!(param, m.store.iter().nth(3).unwrap().1.name),
            e => panic!("unexpected {e}"),
        }
    }
}
