//! Disk-backed supernet: one packed blob per structure plus a JSON manifest.
//!
//! Layout: `{root}/iter_{tag}/manifest.json` and
//! `{root}/iter_{tag}/structures/{layer}_{kind}_{e}.bin`. Each blob is a
//! 32-byte header (`TYRS`, layer, kind, ladder index, retained units,
//! d_model, packed width, reserved) followed by little-endian f32 tensors.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::{read_json, write_json};
use crate::model::{
    AttentionWeights, FfnWeights, ModelConfig, PrunedSublayer, SublayerId, SublayerKind,
    SublayerWeights,
};
use crate::scalar::Scalar;
use crate::supernet::ladder::SparsityLadder;
use crate::supernet::mix::ErrorAccum;
use crate::tensor::Matrix;

pub const STORE_FORMAT_VERSION: u32 = 1;
pub const BLOB_MAGIC: &[u8; 4] = b"TYRS";
pub const HEADER_LEN: usize = 32;
const MANIFEST: &str = "manifest.json";
const STRUCTURES: &str = "structures";

/// Address of one structure: a sublayer and a ladder index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StructureKey {
    pub sublayer: SublayerId,
    pub index: usize,
}

impl fmt::Display for StructureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.sublayer, self.index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreEntry {
    pub key: StructureKey,
    pub realized_sparsity: f64,
    pub retained_units: Vec<usize>,
    pub file: String,
    /// Ladder index the blob was written for; differs from `key.index`
    /// when duplicate ladder points share one blob.
    pub stored_index: usize,
    pub byte_len: u64,
    pub tensors: Vec<BlobTensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format_version: u32,
    pub iteration: String,
    pub model: ModelConfig,
    pub ffn_group_size: usize,
    pub lambda_frac: f64,
    pub error_accum: ErrorAccum,
    /// Ladder of every sublayer, in sublayer order.
    pub ladders: Vec<SparsityLadder>,
    pub entries: Vec<StoreEntry>,
}

/// An opened supernet iteration directory.
#[derive(Clone, Debug)]
pub struct SupernetStore {
    dir: PathBuf,
    manifest: StoreManifest,
}

pub fn iteration_dir(root: &Path, tag: &str) -> PathBuf {
    root.join(format!("iter_{tag}"))
}

impl SupernetStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest: StoreManifest = read_json(&dir.join(MANIFEST))?;
        if manifest.format_version != STORE_FORMAT_VERSION {
            return Err(Error::store(
                dir.display(),
                format!("unsupported store format {}", manifest.format_version),
            ));
        }
        if manifest.ladders.len() != manifest.model.n_sublayers() {
            return Err(Error::store(dir.display(), "ladder count does not match the model"));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn ladders(&self) -> &[SparsityLadder] {
        &self.manifest.ladders
    }

    pub fn ladder(&self, id: SublayerId) -> &SparsityLadder {
        &self.manifest.ladders[id.ordinal()]
    }

    pub fn entry(&self, key: StructureKey) -> Option<&StoreEntry> {
        self.manifest.entries.iter().find(|e| e.key == key)
    }

    /// Decode one structure from disk.
    pub fn load_structure<T: Scalar>(&self, key: StructureKey) -> Result<PrunedSublayer<T>> {
        let entry = self
            .entry(key)
            .ok_or_else(|| Error::store(key, "not in manifest"))?;
        let path = self.dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::store(key, format!("{}: {e}", path.display())))?;
        decode_blob(&self.manifest.model, entry, &bytes)
    }

    /// Total bytes of manifest and blobs.
    pub fn size_bytes(&self) -> u64 {
        dir_size(&self.dir)
    }
}

fn dir_size(path: &Path) -> u64 {
    let Ok(meta) = fs::symlink_metadata(path) else {
        return 0;
    };
    if meta.is_dir() {
        fs::read_dir(path)
            .map(|rd| rd.flatten().map(|e| dir_size(&e.path())).sum())
            .unwrap_or(0)
    } else {
        meta.len()
    }
}

fn packed_width(config: &ModelConfig, kind: SublayerKind, retained: usize) -> usize {
    match kind {
        SublayerKind::Mha => retained * config.head_dim,
        SublayerKind::Ffn => retained,
    }
}

fn tensor_layout(config: &ModelConfig, kind: SublayerKind, width: usize) -> Vec<BlobTensor> {
    let d = config.d_model;
    let names: &[(&str, bool)] = match kind {
        SublayerKind::Mha => &[("wq", true), ("wk", true), ("wv", true), ("wo", false)],
        SublayerKind::Ffn => &[("wgate", true), ("wup", true), ("wdown", false)],
    };
    let mut offset = HEADER_LEN as u64;
    names
        .iter()
        .map(|&(name, wide)| {
            let shape = if wide { vec![d, width] } else { vec![width, d] };
            let t = BlobTensor {
                name: name.into(),
                shape,
                byte_offset: offset,
            };
            offset += 4 * (d * width) as u64;
            t
        })
        .collect()
}

fn encode_blob<T: Scalar>(config: &ModelConfig, s: &PrunedSublayer<T>, index: usize) -> Vec<u8> {
    let width = packed_width(config, s.id.kind, s.retained_units.len());
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(BLOB_MAGIC);
    for v in [
        s.id.layer as u32,
        s.id.kind.code(),
        index as u32,
        s.retained_units.len() as u32,
        config.d_model as u32,
        width as u32,
        0,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mats: Vec<&Matrix<T>> = match &s.weights {
        SublayerWeights::Attention(a) => vec![&a.wq, &a.wk, &a.wv, &a.wo],
        SublayerWeights::Ffn(f) => vec![&f.wgate, &f.wup, &f.wdown],
    };
    for m in mats {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_f32_storage().to_le_bytes());
        }
    }
    out
}

fn decode_blob<T: Scalar>(
    config: &ModelConfig,
    entry: &StoreEntry,
    bytes: &[u8],
) -> Result<PrunedSublayer<T>> {
    let key = entry.key;
    let kind = key.sublayer.kind;
    let retained = entry.retained_units.len();
    let width = packed_width(config, kind, retained);
    let layout = tensor_layout(config, kind, width);
    let expect_len = HEADER_LEN + layout.len() * 4 * config.d_model * width;
    if bytes.len() != expect_len || entry.byte_len as usize != expect_len {
        return Err(Error::store(
            key,
            format!("blob is {} bytes, expected {expect_len}", bytes.len()),
        ));
    }
    if &bytes[..4] != BLOB_MAGIC {
        return Err(Error::store(key, "bad blob magic"));
    }
    let word = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
    };
    let header_ok = word(0) == key.sublayer.layer
        && SublayerKind::from_code(word(1) as u32) == Some(kind)
        && word(2) == entry.stored_index
        && word(3) == retained
        && word(4) == config.d_model
        && word(5) == width;
    if !header_ok {
        return Err(Error::store(key, "blob header does not match manifest entry"));
    }
    let mut mats = layout.iter().map(|t| {
        let start = t.byte_offset as usize;
        let n = t.shape[0] * t.shape[1];
        let data: Vec<T> = bytes[start..start + 4 * n]
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        Matrix::from_vec(t.shape[0], t.shape[1], data)
    });
    let mut next = || mats.next().expect("layout length matches kind");
    let weights = match kind {
        SublayerKind::Mha => SublayerWeights::Attention(AttentionWeights {
            wq: next()?,
            wk: next()?,
            wv: next()?,
            wo: next()?,
        }),
        SublayerKind::Ffn => SublayerWeights::Ffn(FfnWeights {
            wgate: next()?,
            wup: next()?,
            wdown: next()?,
        }),
    };
    let s = PrunedSublayer {
        id: key.sublayer,
        retained_units: entry.retained_units.clone(),
        weights,
        realized_sparsity: entry.realized_sparsity,
    };
    s.validate(config)
        .map_err(|e| Error::store(key, format!("decoded structure invalid: {e}")))?;
    Ok(s)
}

/// Streams structures to disk; the manifest is written by [`StoreWriter::finish`].
pub struct StoreWriter {
    dir: PathBuf,
    config: ModelConfig,
    entries: Vec<StoreEntry>,
}

impl StoreWriter {
    /// Creates (or clears) the iteration directory.
    pub fn create(dir: &Path, config: &ModelConfig) -> Result<Self> {
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let s = dir.join(STRUCTURES);
        fs::create_dir_all(&s).map_err(|e| Error::io(&s, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config: config.dense(),
            entries: Vec::new(),
        })
    }

    pub fn write<T: Scalar>(&mut self, key: StructureKey, s: &PrunedSublayer<T>) -> Result<()> {
        s.validate(&self.config)?;
        let bytes = encode_blob(&self.config, s, key.index);
        let file = format!("{STRUCTURES}/{key}.bin");
        let path = self.dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::store(key, format!("{}: {e}", path.display())))?;
        let width = packed_width(&self.config, key.sublayer.kind, s.retained_units.len());
        self.entries.push(StoreEntry {
            key,
            realized_sparsity: s.realized_sparsity,
            retained_units: s.retained_units.clone(),
            file,
            stored_index: key.index,
            byte_len: bytes.len() as u64,
            tensors: tensor_layout(&self.config, key.sublayer.kind, width),
        });
        Ok(())
    }

    /// Record `key` as sharing the blob already written for `existing`.
    pub fn alias(&mut self, key: StructureKey, existing: StructureKey) -> Result<()> {
        let mut entry = self
            .entries
            .iter()
            .find(|e| e.key == existing)
            .cloned()
            .ok_or_else(|| Error::store(existing, "alias target not written"))?;
        entry.key = key;
        self.entries.push(entry);
        Ok(())
    }

    pub fn finish(
        mut self,
        iteration: &str,
        ffn_group_size: usize,
        lambda_frac: f64,
        error_accum: ErrorAccum,
        ladders: Vec<SparsityLadder>,
    ) -> Result<SupernetStore> {
        self.entries.sort_by_key(|e| e.key);
        let manifest = StoreManifest {
            format_version: STORE_FORMAT_VERSION,
            iteration: iteration.into(),
            model: self.config,
            ffn_group_size,
            lambda_frac,
            error_accum,
            ladders,
            entries: self.entries,
        };
        write_json(&self.dir.join(MANIFEST), &manifest)?;
        Ok(SupernetStore {
            dir: self.dir,
            manifest,
        })
    }
}

/// Remove every `iter_*` directory under `root` except `iter_{keep_tag}`.
/// Returns the number of bytes freed. Safe to re-run after interruption.
pub fn gc_iteration(root: &Path, keep_tag: &str) -> Result<u64> {
    let keep = format!("iter_{keep_tag}");
    let rd = match fs::read_dir(root) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(Error::io(root, e)),
    };
    let mut freed = 0;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !name.starts_with("iter_") || name == keep {
            continue;
        }
        let path = entry.path();
        let size = dir_size(&path);
        match fs::remove_dir_all(&path) {
            Ok(()) => freed += size,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::store(name, format!("cleanup failed: {e}"))),
        }
    }
    Ok(freed)
}
