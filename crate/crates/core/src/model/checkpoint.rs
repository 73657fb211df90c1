//! Checkpoint directories: `manifest.json` plus one raw little-endian f32 blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::model::config::ModelConfig;
use crate::model::forward::Model;
use crate::model::weights::TransformerWeights;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub byte_offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint<T: Scalar>(
    dir: &Path,
    config: &ModelConfig,
    weights: &TransformerWeights<T>,
) -> Result<()> {
    config.validate()?;
    weights.validate(config)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, view) in weights.named_tensors() {
        tensors.push(TensorEntry {
            name,
            dtype: "f32".into(),
            shape: view.shape(),
            file: BLOB_FILE.into(),
            byte_offset: blob.len() as u64,
        });
        for v in view.values() {
            blob.extend_from_slice(&v.to_f32_storage().to_le_bytes());
        }
    }
    write_atomic(&dir.join(BLOB_FILE), &blob)?;
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: config.clone(),
        tensors,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(dir, e))?;
    write_atomic(&dir.join(MANIFEST_FILE), &json)
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(ModelConfig, TransformerWeights<T>)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(&raw).map_err(|e| Error::json(&manifest_path, e))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::format(
            "manifest",
            format!("unsupported format_version {}", manifest.format_version),
        ));
    }
    let config = manifest.config;
    config.validate()?;

    let mut blobs: std::collections::BTreeMap<String, Vec<u8>> = Default::default();
    let mut weights = TransformerWeights::<T>::zeros(&config);
    let expected: Vec<(String, Vec<usize>)> = weights
        .named_tensors()
        .into_iter()
        .map(|(n, v)| (n, v.shape()))
        .collect();
    let mut decoded = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        let entry = manifest
            .tensors
            .iter()
            .find(|t| &t.name == name)
            .ok_or_else(|| Error::format(name, "missing from manifest"))?;
        if entry.dtype != "f32" {
            return Err(Error::format(name, format!("unsupported dtype {}", entry.dtype)));
        }
        if &entry.shape != shape {
            return Err(Error::format(
                name,
                format!("declared shape {:?}, config implies {:?}", entry.shape, shape),
            ));
        }
        if entry.file.contains('/') || entry.file.contains("..") {
            return Err(Error::format(name, "blob file must be a plain file name"));
        }
        if !blobs.contains_key(&entry.file) {
            let p = dir.join(&entry.file);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            blobs.insert(entry.file.clone(), bytes);
        }
        let bytes = &blobs[&entry.file];
        let count: usize = shape.iter().product();
        let start = entry.byte_offset as usize;
        let end = start + 4 * count;
        if end > bytes.len() {
            return Err(Error::format(
                name,
                format!("blob truncated: need bytes {start}..{end}, file has {}", bytes.len()),
            ));
        }
        let values: Vec<T> = bytes[start..end]
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(name, format!("non-finite value at element {p}")));
        }
        decoded.push(values);
    }

    let mut it = decoded.into_iter();
    let mut next = || it.next().expect("tensor count checked against manifest");
    fill(&mut weights.embed, next());
    for layer in &mut weights.layers {
        fill(&mut layer.attn.wq, next());
        fill(&mut layer.attn.wk, next());
        fill(&mut layer.attn.wv, next());
        fill(&mut layer.attn.wo, next());
        fill(&mut layer.ffn.wgate, next());
        fill(&mut layer.ffn.wup, next());
        fill(&mut layer.ffn.wdown, next());
        layer.norm1 = next();
        layer.norm2 = next();
    }
    weights.final_norm = next();
    fill(&mut weights.lm_head, next());
    Ok((config, weights))
}

fn fill<T: Scalar>(m: &mut Matrix<T>, values: Vec<T>) {
    let (r, c) = m.shape();
    *m = Matrix::from_vec(r, c, values).expect("length checked against shape");
}

/// Load a checkpoint directly into a validated model.
pub fn load_model<T: Scalar>(dir: &Path) -> Result<Model<T>> {
    let (config, weights) = load_checkpoint(dir)?;
    Model::new(config, weights)
}
