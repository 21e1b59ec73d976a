//! Binary masks, their byte and bit-packed encodings, and sparsity
//! accounting.

use std::collections::BTreeMap;

use bitvec::prelude::{BitVec, Lsb0};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tree::ParamTree;

/// Bit-packed mask: bit `i` of byte `j` holds element `8j + i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedMask {
    bytes: Vec<u8>,
    len: usize,
}

impl PackedMask {
    pub fn from_raw(bytes: Vec<u8>, len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Data(format!(
                "packed mask of {len} elements needs {} bytes, got {}",
                len.div_ceil(8),
                bytes.len()
            )));
        }
        Ok(Self { bytes, len })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn bits(&self) -> &bitvec::slice::BitSlice<u8, Lsb0> {
        &bitvec::slice::BitSlice::from_slice(&self.bytes)[..self.len]
    }
}

/// Packs a 0/1 byte mask into bits, least-significant bit first.
pub fn pack_mask(mask: &[u8]) -> Result<PackedMask> {
    if let Some((i, v)) = mask.iter().enumerate().find(|(_, &v)| v > 1) {
        return Err(Error::Data(format!("mask element {i} is {v}, expected 0 or 1")));
    }
    let mut bits: BitVec<u8, Lsb0> = mask.iter().map(|&v| v == 1).collect();
    bits.set_uninitialized(false);
    Ok(PackedMask {
        bytes: bits.into_vec(),
        len: mask.len(),
    })
}

pub fn unpack_mask(packed: &PackedMask) -> Vec<u8> {
    packed.bits().iter().map(|b| u8::from(*b)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskEncoding {
    Bytes(Vec<u8>),
    Packed(PackedMask),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingKind {
    Bytes,
    Packed,
}

/// A binary mask shaped like the parameter it gates.
#[derive(Debug, Clone)]
pub struct Mask {
    shape: Vec<usize>,
    encoding: MaskEncoding,
}

/// Masks compare by shape and contents, whatever their encoding.
impl PartialEq for Mask {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.to_bytes() == other.to_bytes()
    }
}

impl Mask {
    pub fn from_bytes(shape: Vec<usize>, bytes: Vec<u8>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != bytes.len() {
            return Err(Error::Data(format!(
                "mask shape {shape:?} needs {n} values, got {}",
                bytes.len()
            )));
        }
        if let Some(v) = bytes.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("mask value {v}, expected 0 or 1")));
        }
        Ok(Self {
            shape,
            encoding: MaskEncoding::Bytes(bytes),
        })
    }

    pub fn from_packed(shape: Vec<usize>, packed: PackedMask) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != packed.len() {
            return Err(Error::Data(format!(
                "mask shape {shape:?} needs {n} bits, got {}",
                packed.len()
            )));
        }
        Ok(Self {
            shape,
            encoding: MaskEncoding::Packed(packed),
        })
    }

    pub fn ones(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            encoding: MaskEncoding::Bytes(vec![1; n]),
        }
    }

    /// Mask with ones exactly at `keep`.
    pub fn from_indices(shape: &[usize], keep: &[usize]) -> Self {
        let mut bytes = vec![0u8; shape.iter().product()];
        for &i in keep {
            bytes[i] = 1;
        }
        Self {
            shape: shape.to_vec(),
            encoding: MaskEncoding::Bytes(bytes),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn encoding(&self) -> &MaskEncoding {
        &self.encoding
    }

    pub fn encoding_kind(&self) -> EncodingKind {
        match self.encoding {
            MaskEncoding::Bytes(_) => EncodingKind::Bytes,
            MaskEncoding::Packed(_) => EncodingKind::Packed,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match &self.encoding {
            MaskEncoding::Bytes(b) => b.clone(),
            MaskEncoding::Packed(p) => unpack_mask(p),
        }
    }

    pub fn to_bools(&self) -> Vec<bool> {
        match &self.encoding {
            MaskEncoding::Bytes(b) => b.iter().map(|&v| v == 1).collect(),
            MaskEncoding::Packed(p) => p.bits().iter().map(|b| *b).collect(),
        }
    }

    pub fn count_ones(&self) -> usize {
        match &self.encoding {
            MaskEncoding::Bytes(b) => b.iter().filter(|&&v| v == 1).count(),
            MaskEncoding::Packed(p) => p.bits().count_ones(),
        }
    }

    pub fn sparsity(&self) -> f64 {
        let n = self.numel();
        (n - self.count_ones()) as f64 / n as f64
    }

    pub fn encoded(&self, kind: EncodingKind) -> Self {
        let encoding = match (kind, &self.encoding) {
            (EncodingKind::Bytes, MaskEncoding::Bytes(_)) | (EncodingKind::Packed, MaskEncoding::Packed(_)) => {
                self.encoding.clone()
            }
            (EncodingKind::Packed, MaskEncoding::Bytes(b)) => {
                MaskEncoding::Packed(pack_mask(b).expect("mask bytes are validated 0/1"))
            }
            (EncodingKind::Bytes, MaskEncoding::Packed(p)) => MaskEncoding::Bytes(unpack_mask(p)),
        };
        Self {
            shape: self.shape.clone(),
            encoding,
        }
    }

    /// Zeroes the coordinates of `t` where the mask is 0.
    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        if t.shape() != self.shape.as_slice() {
            return Err(Error::Shape(format!(
                "mask of shape {:?} applied to tensor of shape {:?}",
                self.shape,
                t.shape()
            )));
        }
        let keep = self.to_bools();
        let data = t
            .data()
            .iter()
            .zip(keep)
            .map(|(&x, k)| if k { x } else { 0.0 })
            .collect();
        Tensor::new(t.shape().to_vec(), data)
    }

    /// The mask as a 0.0/1.0 tensor.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.to_bools().into_iter().map(|k| if k { 1.0 } else { 0.0 }).collect();
        Tensor::new(self.shape.clone(), data).expect("mask shape is valid")
    }
}

/// Masks for the sparsified parameters of a tree, plus the shapes of the
/// parameters left dense. Together they cover the whole parameter tree.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaskTree {
    pub masks: BTreeMap<String, Mask>,
    pub dense: BTreeMap<String, Vec<usize>>,
}

impl MaskTree {
    /// All-ones masks for the paths `selects` accepts; the rest are dense.
    pub fn ones_for(params: &ParamTree, selects: impl Fn(&str, &[usize]) -> bool) -> Self {
        let mut tree = Self::default();
        for (path, t) in params.iter() {
            if selects(path, t.shape()) {
                tree.masks.insert(path.to_string(), Mask::ones(t.shape()));
            } else {
                tree.dense.insert(path.to_string(), t.shape().to_vec());
            }
        }
        tree
    }

    pub fn get(&self, path: &str) -> Option<&Mask> {
        self.masks.get(path)
    }

    /// Masked copy of `params`; dense paths pass through untouched.
    pub fn apply(&self, params: &ParamTree) -> Result<ParamTree> {
        self.check_covers(params)?;
        params
            .iter()
            .map(|(path, t)| {
                let out = match self.masks.get(path) {
                    Some(m) => m.apply(t)?,
                    None => t.clone(),
                };
                Ok((path.to_string(), out))
            })
            .collect()
    }

    /// Checks that every parameter has a matching mask or dense entry.
    pub fn check_covers(&self, params: &ParamTree) -> Result<()> {
        if params.len() != self.masks.len() + self.dense.len() {
            let missing = params
                .paths()
                .find(|p| !self.masks.contains_key(*p) && !self.dense.contains_key(*p))
                .or_else(|| {
                    self.masks
                        .keys()
                        .chain(self.dense.keys())
                        .map(String::as_str)
                        .find(|p| params.get(p).is_none())
                })
                .unwrap_or_default();
            return Err(Error::Structural {
                path: missing.to_string(),
                detail: "mask tree does not mirror the parameter tree".into(),
            });
        }
        for (path, t) in params.iter() {
            let shape = match (self.masks.get(path), self.dense.get(path)) {
                (Some(m), _) => m.shape(),
                (None, Some(s)) => s.as_slice(),
                (None, None) => {
                    return Err(Error::Structural {
                        path: path.to_string(),
                        detail: "no mask or dense entry".into(),
                    })
                }
            };
            if shape != t.shape() {
                return Err(Error::Structural {
                    path: path.to_string(),
                    detail: format!("mask shape {shape:?} vs parameter shape {:?}", t.shape()),
                });
            }
        }
        Ok(())
    }

    pub fn encoded(&self, kind: EncodingKind) -> Self {
        Self {
            masks: self.masks.iter().map(|(k, m)| (k.clone(), m.encoded(kind))).collect(),
            dense: self.dense.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityCount {
    pub nonzeros: usize,
    pub size: usize,
    pub sparsity: f64,
}

impl SparsityCount {
    fn new(nonzeros: usize, size: usize) -> Self {
        let sparsity = if size == 0 {
            0.0
        } else {
            (size - nonzeros) as f64 / size as f64
        };
        Self {
            nonzeros,
            size,
            sparsity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsitySummary {
    /// Every path, masked or dense.
    pub layers: BTreeMap<String, SparsityCount>,
    /// Pooled over masked paths only.
    pub masked: SparsityCount,
    /// Pooled over the whole model; dense parameters count as fully nonzero.
    pub total: SparsityCount,
}

pub fn sparsity_summary(masks: &MaskTree) -> SparsitySummary {
    let mut layers = BTreeMap::new();
    let (mut masked_nz, mut masked_size) = (0, 0);
    for (path, m) in &masks.masks {
        let c = SparsityCount::new(m.count_ones(), m.numel());
        masked_nz += c.nonzeros;
        masked_size += c.size;
        layers.insert(path.clone(), c);
    }
    let (mut dense_size, mut total_nz) = (0, masked_nz);
    for (path, shape) in &masks.dense {
        let n: usize = shape.iter().product();
        dense_size += n;
        total_nz += n;
        layers.insert(path.clone(), SparsityCount::new(n, n));
    }
    SparsitySummary {
        layers,
        masked: SparsityCount::new(masked_nz, masked_size),
        total: SparsityCount::new(total_nz, masked_size + dense_size),
    }
}
