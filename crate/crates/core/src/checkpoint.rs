//! On-disk checkpoints.
//!
//! A checkpoint is a directory holding `manifest.json` and one raw
//! little-endian file per tensor or mask under `data/`. Tensors are `f64`;
//! byte masks hold one `u8` per element; packed masks hold `ceil(n/8)` bytes,
//! least-significant bit first. The manifest records paths, shapes, dtypes,
//! mask encodings, the step counter and a SHA-256 hash of the stored config.
//!
//! Writes go to a sibling staging directory that is renamed into place, so a
//! reader never sees a half-written checkpoint.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::SparsityState;
use crate::error::{Error, Result};
use crate::mask::{EncodingKind, Mask, MaskEncoding, MaskTree, PackedMask};
use crate::optim::OptState;
use crate::tensor::Tensor;
use crate::tree::ParamTree;

pub const FORMAT: &str = "sparsekit-checkpoint";
pub const VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

/// Everything a checkpoint holds. Only `state` is required.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: SparsityState,
    pub params: Option<ParamTree>,
    /// The configuration that produced this state, stored verbatim.
    pub config: Option<serde_json::Value>,
    /// Free-form caller data (e.g. harness bookkeeping).
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn from_state(state: SparsityState) -> Self {
        Self {
            state,
            params: None,
            config: None,
            metadata: serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    path: String,
    shape: Vec<usize>,
    dtype: String,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskEntry {
    path: String,
    shape: Vec<usize>,
    dtype: String,
    encoding: EncodingKind,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptStateEntry {
    step: u64,
    slots: BTreeMap<String, Vec<TensorEntry>>,
    nested: Vec<OptStateEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    step: u64,
    config_hash: Option<String>,
    config: Option<serde_json::Value>,
    metadata: serde_json::Value,
    params: Option<Vec<TensorEntry>>,
    masks: Vec<MaskEntry>,
    dense: BTreeMap<String, Vec<usize>>,
    per_layer_targets: BTreeMap<String, f64>,
    inner: OptStateEntry,
    algo_slots: BTreeMap<String, Vec<TensorEntry>>,
}

/// Hex SHA-256 of a config's compact JSON encoding.
pub fn config_hash(config: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config).expect("JSON values always serialize");
    hex::encode(Sha256::digest(&bytes))
}

struct Writer {
    root: PathBuf,
    next: usize,
}

impl Writer {
    fn file(&mut self, bytes: &[u8]) -> Result<String> {
        let name = format!("data/{:05}.bin", self.next);
        self.next += 1;
        fs::write(self.root.join(&name), bytes)?;
        Ok(name)
    }

    fn tree(&mut self, tree: &ParamTree) -> Result<Vec<TensorEntry>> {
        tree.iter()
            .map(|(path, t)| {
                let bytes: Vec<u8> = t.data().iter().flat_map(|x| x.to_le_bytes()).collect();
                Ok(TensorEntry {
                    path: path.to_string(),
                    shape: t.shape().to_vec(),
                    dtype: "f64".into(),
                    file: self.file(&bytes)?,
                })
            })
            .collect()
    }

    fn opt_state(&mut self, state: &OptState) -> Result<OptStateEntry> {
        Ok(OptStateEntry {
            step: state.step,
            slots: state
                .slots
                .iter()
                .map(|(k, v)| Ok((k.clone(), self.tree(v)?)))
                .collect::<Result<_>>()?,
            nested: state.nested.iter().map(|s| self.opt_state(s)).collect::<Result<_>>()?,
        })
    }
}

/// Writes `checkpoint` to `dir`, replacing any existing checkpoint there.
pub fn save_checkpoint(dir: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let dir = dir.as_ref();
    let staging = staging_path(dir);
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(staging.join("data"))?;
    let written = write_into(&staging, checkpoint);
    if let Err(e) = written {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&staging, dir)?;
    Ok(())
}

fn staging_path(dir: &Path) -> PathBuf {
    let mut name = dir
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| "checkpoint".into());
    name.push(".staging");
    dir.with_file_name(name)
}

fn write_into(root: &Path, ck: &Checkpoint) -> Result<()> {
    let mut w = Writer {
        root: root.to_path_buf(),
        next: 0,
    };
    let state = &ck.state;
    let params = ck.params.as_ref().map(|p| w.tree(p)).transpose()?;
    let masks = state
        .masks
        .masks
        .iter()
        .map(|(path, m)| {
            let (encoding, bytes) = match m.encoding() {
                MaskEncoding::Bytes(b) => (EncodingKind::Bytes, b.clone()),
                MaskEncoding::Packed(p) => (EncodingKind::Packed, p.bytes().to_vec()),
            };
            Ok(MaskEntry {
                path: path.clone(),
                shape: m.shape().to_vec(),
                dtype: "u8".into(),
                encoding,
                file: w.file(&bytes)?,
            })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        step: state.step,
        config_hash: ck.config.as_ref().map(config_hash),
        config: ck.config.clone(),
        metadata: ck.metadata.clone(),
        params,
        masks,
        dense: state.masks.dense.clone(),
        per_layer_targets: state.per_layer_targets.clone(),
        inner: w.opt_state(&state.inner)?,
        algo_slots: state
            .algo_slots
            .iter()
            .map(|(k, v)| Ok((k.clone(), w.tree(v)?)))
            .collect::<Result<_>>()?,
    };
    fs::write(root.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

struct Reader<'a> {
    root: &'a Path,
}

impl Reader<'_> {
    fn bytes(&self, file: &str, expected: usize) -> Result<Vec<u8>> {
        if file.contains("..") || Path::new(file).is_absolute() {
            return Err(Error::Checkpoint(format!("refusing data file path `{file}`")));
        }
        let bytes =
            fs::read(self.root.join(file)).map_err(|e| Error::Checkpoint(format!("cannot read `{file}`: {e}")))?;
        if bytes.len() != expected {
            return Err(Error::Checkpoint(format!(
                "`{file}` holds {} bytes, expected {expected} (truncated or corrupt)",
                bytes.len()
            )));
        }
        Ok(bytes)
    }

    fn tree(&self, entries: &[TensorEntry]) -> Result<ParamTree> {
        let mut tree = ParamTree::new();
        for e in entries {
            if e.dtype != "f64" {
                return Err(Error::Checkpoint(format!(
                    "unsupported dtype `{}` for `{}`",
                    e.dtype, e.path
                )));
            }
            let n: usize = e.shape.iter().product();
            let bytes = self.bytes(&e.file, n * 8)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let t =
                Tensor::new(e.shape.clone(), data).map_err(|err| Error::Checkpoint(format!("`{}`: {err}", e.path)))?;
            if tree.insert(e.path.clone(), t)?.is_some() {
                return Err(Error::Checkpoint(format!("duplicate entry `{}`", e.path)));
            }
        }
        Ok(tree)
    }

    fn opt_state(&self, e: &OptStateEntry) -> Result<OptState> {
        Ok(OptState {
            step: e.step,
            slots: e
                .slots
                .iter()
                .map(|(k, v)| Ok((k.clone(), self.tree(v)?)))
                .collect::<Result<_>>()?,
            nested: e.nested.iter().map(|s| self.opt_state(s)).collect::<Result<_>>()?,
        })
    }

    fn mask(&self, e: &MaskEntry) -> Result<Mask> {
        let n: usize = e.shape.iter().product();
        let corrupt = |err: Error| Error::Checkpoint(format!("mask `{}`: {err}", e.path));
        match e.encoding {
            EncodingKind::Bytes => Mask::from_bytes(e.shape.clone(), self.bytes(&e.file, n)?).map_err(corrupt),
            EncodingKind::Packed => {
                let packed = PackedMask::from_raw(self.bytes(&e.file, n.div_ceil(8))?, n).map_err(corrupt)?;
                Mask::from_packed(e.shape.clone(), packed).map_err(corrupt)
            }
        }
    }
}

/// Reads a checkpoint written by [`save_checkpoint`]. Any inconsistency is
/// a checkpoint error; nothing partial is returned.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let root = dir.as_ref();
    let raw = fs::read(root.join(MANIFEST))
        .map_err(|e| Error::Checkpoint(format!("cannot read manifest in {}: {e}", root.display())))?;
    let manifest: Manifest =
        serde_json::from_slice(&raw).map_err(|e| Error::Checkpoint(format!("malformed manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format `{}`", manifest.format)));
    }
    if manifest.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {} is not supported (expected {VERSION})",
            manifest.version
        )));
    }
    match (&manifest.config, &manifest.config_hash) {
        (Some(cfg), Some(hash)) if &config_hash(cfg) != hash => {
            return Err(Error::Checkpoint("config hash does not match stored config".into()))
        }
        (Some(_), None) | (None, Some(_)) => {
            return Err(Error::Checkpoint("config and config_hash must appear together".into()))
        }
        _ => {}
    }

    let r = Reader { root };
    let params = manifest.params.as_deref().map(|p| r.tree(p)).transpose()?;
    let mut masks = MaskTree {
        masks: BTreeMap::new(),
        dense: manifest.dense,
    };
    for e in &manifest.masks {
        masks.masks.insert(e.path.clone(), r.mask(e)?);
    }
    if let Some(p) = &params {
        masks
            .check_covers(p)
            .map_err(|e| Error::Checkpoint(format!("masks do not match params: {e}")))?;
    }
    let state = SparsityState {
        masks,
        per_layer_targets: manifest.per_layer_targets,
        step: manifest.step,
        inner: r.opt_state(&manifest.inner)?,
        algo_slots: manifest
            .algo_slots
            .iter()
            .map(|(k, v)| Ok((k.clone(), r.tree(v)?)))
            .collect::<Result<_>>()?,
    };
    Ok(Checkpoint {
        state,
        params,
        config: manifest.config,
        metadata: manifest.metadata,
    })
}

/// Saves only the sparsity state.
pub fn save_state(dir: impl AsRef<Path>, state: &SparsityState) -> Result<()> {
    save_checkpoint(dir, &Checkpoint::from_state(state.clone()))
}

pub fn load_state(dir: impl AsRef<Path>) -> Result<SparsityState> {
    Ok(load_checkpoint(dir)?.state)
}
