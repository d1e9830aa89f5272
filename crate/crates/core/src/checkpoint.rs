//! Checkpoint file pair: `<base>.manifest.json` + `<base>.blob`.
//!
//! The blob is the concatenation of every parameter's values as 64-bit
//! little-endian floats, in manifest order. Offsets and lengths in the
//! manifest are in bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{BlockTag, Parameter};
use crate::tensor::Tensor;
use crate::zoo::{build, Family, Model, ModelSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub block: BlockTag,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub family: String,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub block_widths: Vec<usize>,
    pub blocks: Vec<BlockTag>,
    pub blob_bytes: u64,
    pub parameters: Vec<ParamRecord>,
}

pub fn manifest_path(base: &Path) -> PathBuf {
    with_suffix(base, ".manifest.json")
}

pub fn blob_path(base: &Path) -> PathBuf {
    with_suffix(base, ".blob")
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn manifest_of(model: &Model) -> Manifest {
    let spec = model.spec();
    let mut offset = 0u64;
    let parameters = model
        .params()
        .iter()
        .map(|p| {
            let length = (p.value.len() * 8) as u64;
            let rec = ParamRecord {
                name: p.id.clone(),
                block: p.block,
                shape: p.value.shape().to_vec(),
                offset,
                length,
            };
            offset += length;
            rec
        })
        .collect();
    Manifest {
        version: FORMAT_VERSION,
        family: spec.family.name().to_string(),
        input_shape: spec.input_shape,
        num_classes: spec.num_classes,
        block_widths: spec.block_widths.clone(),
        blocks: spec.blocks(),
        blob_bytes: offset,
        parameters,
    }
}

pub fn encode_blob(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    for p in model.params() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(model: &Model, base: &Path) -> Result<()> {
    let manifest = manifest_of(model);
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    let mpath = manifest_path(base);
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;
    let bpath = blob_path(base);
    fs::write(&bpath, encode_blob(model)).map_err(|e| Error::io(&bpath, e))
}

pub fn load_checkpoint(base: &Path) -> Result<Model> {
    let mpath = manifest_path(base);
    let text = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_slice(&text).map_err(|e| Error::Checkpoint {
        position: 0,
        message: format!("manifest: {e}"),
    })?;
    let bpath = blob_path(base);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    decode(&manifest, &blob)
}

/// Rebuilds a model from a parsed manifest and its blob bytes.
pub fn decode(manifest: &Manifest, blob: &[u8]) -> Result<Model> {
    let fail = |position: u64, message: String| Error::Checkpoint { position, message };
    if manifest.version != FORMAT_VERSION {
        return Err(fail(0, format!("unsupported version {}", manifest.version)));
    }
    let family: Family = manifest
        .family
        .parse()
        .map_err(|_| fail(0, format!("unknown family tag {:?}", manifest.family)))?;
    let spec = ModelSpec {
        family,
        input_shape: manifest.input_shape,
        num_classes: manifest.num_classes,
        block_widths: manifest.block_widths.clone(),
    };
    let skeleton = build(&spec, 0).map_err(|e| fail(0, e.to_string()))?;
    if manifest.blocks != spec.blocks() {
        return Err(fail(0, "block list does not match the family layout".into()));
    }
    if manifest.parameters.len() != skeleton.params().len() {
        return Err(fail(
            0,
            format!(
                "manifest lists {} parameters, {} expects {}",
                manifest.parameters.len(),
                family,
                skeleton.params().len()
            ),
        ));
    }
    if blob.len() as u64 != manifest.blob_bytes {
        return Err(fail(
            blob.len().min(manifest.blob_bytes as usize) as u64,
            format!(
                "blob holds {} bytes, manifest declares {}",
                blob.len(),
                manifest.blob_bytes
            ),
        ));
    }
    let mut cursor = 0u64;
    let mut params = Vec::with_capacity(manifest.parameters.len());
    for (rec, expected) in manifest.parameters.iter().zip(skeleton.params()) {
        if rec.name != expected.id || rec.block != expected.block || rec.shape != expected.value.shape() {
            return Err(fail(
                rec.offset,
                format!(
                    "parameter {} ({} {:?}) does not match layout entry {} ({} {:?})",
                    rec.name,
                    rec.block,
                    rec.shape,
                    expected.id,
                    expected.block,
                    expected.value.shape()
                ),
            ));
        }
        let numel: usize = rec.shape.iter().product();
        if rec.offset != cursor || rec.length != (numel * 8) as u64 {
            return Err(fail(
                rec.offset,
                format!("parameter {} has offset/length not contiguous with the blob", rec.name),
            ));
        }
        let end = rec.offset + rec.length;
        if end > blob.len() as u64 {
            return Err(fail(blob.len() as u64, format!("blob truncated inside {}", rec.name)));
        }
        let bytes = &blob[rec.offset as usize..end as usize];
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Parameter::new(
            rec.name.clone(),
            rec.block,
            Tensor::new(rec.shape.clone(), data)?,
        ));
        cursor = end;
    }
    if cursor != blob.len() as u64 {
        return Err(fail(cursor, "trailing bytes after last parameter".into()));
    }
    Ok(Model::from_parts(spec, params))
}
