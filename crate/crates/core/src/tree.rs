//! Named parameter trees.
//!
//! Parameters, gradients, optimizer slots and scores all live in a
//! [`ParamTree`]: a map from a `/`-separated path to a [`Tensor`]. Iteration
//! is lexicographic by path, so every traversal is deterministic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamTree {
    entries: BTreeMap<String, Tensor>,
}

impl ParamTree {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `tensor` at `path`; an empty path is rejected.
    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor) -> Result<Option<Tensor>> {
        let path = path.into();
        if path.is_empty() {
            return Err(Error::Argument("parameter paths must be non-empty".into()));
        }
        Ok(self.entries.insert(path, tensor))
    }

    /// Builder-style insert for literals in tests and examples.
    pub fn with(mut self, path: &str, tensor: Tensor) -> Self {
        self.insert(path, tensor).expect("non-empty path");
        self
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.entries.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Total number of scalar elements across all entries.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn zeros_like(&self) -> Self {
        self.map(Tensor::zeros_like)
    }

    /// Applies `f` to every tensor, keeping paths.
    pub fn map(&self, f: impl Fn(&Tensor) -> Tensor) -> Self {
        Self {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), f(v))).collect(),
        }
    }

    /// Elementwise binary op over two trees with the same topology.
    pub fn zip_map(&self, other: &ParamTree, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_same_topology(self, other)?;
        let mut out = BTreeMap::new();
        for ((path, a), b) in self.entries.iter().zip(other.entries.values()) {
            out.insert(path.clone(), a.zip_with(b, &f)?);
        }
        Ok(Self { entries: out })
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }
}

impl FromIterator<(String, Tensor)> for ParamTree {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

impl IntoIterator for ParamTree {
    type Item = (String, Tensor);
    type IntoIter = std::collections::btree_map::IntoIter<String, Tensor>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.into_iter()
    }
}

/// Fails with a structural error naming the first path where the two trees
/// diverge, either by membership or by shape.
pub fn check_same_topology(a: &ParamTree, b: &ParamTree) -> Result<()> {
    let mut left = a.entries.iter();
    let mut right = b.entries.iter();
    loop {
        match (left.next(), right.next()) {
            (None, None) => return Ok(()),
            (Some((pa, _)), None) => {
                return Err(Error::Structural {
                    path: pa.clone(),
                    detail: "present only in the first tree".into(),
                })
            }
            (None, Some((pb, _))) => {
                return Err(Error::Structural {
                    path: pb.clone(),
                    detail: "present only in the second tree".into(),
                })
            }
            (Some((pa, ta)), Some((pb, tb))) => {
                if pa != pb {
                    let (path, detail) = if pa < pb {
                        (pa, "present only in the first tree")
                    } else {
                        (pb, "present only in the second tree")
                    };
                    return Err(Error::Structural {
                        path: path.clone(),
                        detail: detail.into(),
                    });
                }
                if ta.shape() != tb.shape() {
                    return Err(Error::Structural {
                        path: pa.clone(),
                        detail: format!("shape {:?} vs {:?}", ta.shape(), tb.shape()),
                    });
                }
            }
        }
    }
}

/// Maps `f` over aligned entries of one or more trees with identical
/// topology. `f` receives the tensors at one path, in argument order.
pub fn tree_map(f: impl Fn(&[&Tensor]) -> Tensor, trees: &[&ParamTree]) -> Result<ParamTree> {
    let Some((first, rest)) = trees.split_first() else {
        return Err(Error::Argument("tree_map needs at least one tree".into()));
    };
    for other in rest {
        check_same_topology(first, other)?;
    }
    let mut out = BTreeMap::new();
    let mut args = Vec::with_capacity(trees.len());
    for (path, tensor) in &first.entries {
        args.clear();
        args.push(tensor);
        args.extend(rest.iter().map(|t| &t.entries[path]));
        let mapped = f(&args);
        if mapped.shape() != tensor.shape() {
            return Err(Error::Structural {
                path: path.clone(),
                detail: format!("mapped shape {:?} differs from {:?}", mapped.shape(), tensor.shape()),
            });
        }
        out.insert(path.clone(), mapped);
    }
    Ok(ParamTree { entries: out })
}
