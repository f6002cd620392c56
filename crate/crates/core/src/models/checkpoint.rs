//! Checkpoint files: a JSON manifest plus one raw little-endian `f64` blob.
//!
//! ```text
//! <name>.json   {format_version, dtype, byte_order, architecture, params: [{name, shape, offset, len}], data_file, sha256}
//! <name>.bin    concatenated parameter values in manifest order
//! ```
//!
//! Loading reproduces every value bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelSpec, Transformer};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Rng, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in values.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub byte_order: String,
    pub architecture: serde_json::Value,
    pub params: Vec<ParamEntry>,
    pub data_file: String,
    pub sha256: String,
}

pub fn manifest_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.json"))
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptArtifact { path: path.to_path_buf(), reason: reason.into() }
}

/// Write `store` under `dir/<name>.{json,bin}` with `architecture` embedded in
/// the manifest.
pub fn save_store(dir: &Path, name: &str, architecture: &impl Serialize, store: &ParamStore) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::with_capacity(store.num_scalars() * 8);
    let mut params = Vec::with_capacity(store.len());
    let mut offset = 0;
    for (pname, t) in store.iter() {
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        params.push(ParamEntry { name: pname.to_string(), shape: t.shape().to_vec(), offset, len: t.len() });
        offset += t.len();
    }
    let data_file = format!("{name}.bin");
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: "f64".into(),
        byte_order: "little".into(),
        architecture: serde_json::to_value(architecture)?,
        params,
        data_file: data_file.clone(),
        sha256: hex::encode(Sha256::digest(&blob)),
    };
    fs::write(dir.join(&data_file), &blob)?;
    fs::write(manifest_path(dir, name), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

/// Read a manifest and its named tensors.
pub fn load_tensors(dir: &Path, name: &str) -> Result<(Manifest, Vec<(String, Tensor)>)> {
    let mpath = manifest_path(dir, name);
    if !mpath.exists() {
        return Err(Error::MissingArtifact(mpath));
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(&mpath)?).map_err(|e| corrupt(&mpath, e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(corrupt(&mpath, format!("unsupported format version {}", manifest.format_version)));
    }
    if manifest.dtype != "f64" || manifest.byte_order != "little" {
        return Err(corrupt(&mpath, "expected little-endian f64 data"));
    }
    let bpath = dir.join(&manifest.data_file);
    if !bpath.exists() {
        return Err(Error::MissingArtifact(bpath));
    }
    let blob = fs::read(&bpath)?;
    if hex::encode(Sha256::digest(&blob)) != manifest.sha256 {
        return Err(corrupt(&bpath, "checksum mismatch"));
    }
    let mut tensors = Vec::with_capacity(manifest.params.len());
    for p in &manifest.params {
        let end = (p.offset + p.len) * 8;
        if end > blob.len() || p.shape.iter().product::<usize>() != p.len {
            return Err(corrupt(&bpath, format!("entry {} out of bounds", p.name)));
        }
        let data = blob[p.offset * 8..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((p.name.clone(), Tensor::new(p.shape.clone(), data)?));
    }
    Ok((manifest, tensors))
}

/// Overwrite the values of `store` with same-named tensors; every parameter
/// must be present with a matching shape.
pub fn fill_store(store: &mut ParamStore, tensors: Vec<(String, Tensor)>, source: &Path) -> Result<()> {
    if tensors.len() != store.len() {
        return Err(corrupt(source, format!("expected {} tensors, found {}", store.len(), tensors.len())));
    }
    for (name, t) in tensors {
        let id = store.find(&name).ok_or_else(|| corrupt(source, format!("unknown parameter {name}")))?;
        if store.value(id).shape() != t.shape() {
            return Err(corrupt(source, format!("shape mismatch for {name}")));
        }
        *store.value_mut(id) = t;
    }
    Ok(())
}

pub fn architecture<T: DeserializeOwned>(manifest: &Manifest, source: &Path) -> Result<T> {
    serde_json::from_value(manifest.architecture.clone()).map_err(|e| corrupt(source, e.to_string()))
}

impl Model {
    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        save_store(dir, name, &self.arch.spec, &self.params)
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let (manifest, tensors) = load_tensors(dir, name)?;
        let source = manifest_path(dir, name);
        let spec: ModelSpec = architecture(&manifest, &source)?;
        let mut params = ParamStore::new();
        let arch = Transformer::new(spec, &mut params, "model", &mut Rng::new(0))?;
        fill_store(&mut params, tensors, &source)?;
        Ok(Self { arch, params })
    }
}
