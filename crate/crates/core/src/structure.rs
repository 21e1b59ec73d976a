//! Structured top-k: turn a score tensor into a mask that keeps the best
//! coordinates while respecting an unstructured, N:M, or block pattern.
//!
//! - N:M groups are `m` consecutive elements along the **last** dimension.
//! - Blocks tile the **first two** dimensions; any trailing dimensions get
//!   their own independent block grid. Block scores are the mean of their
//!   element scores.
//!
//! Shapes that do not divide evenly are rejected rather than padded.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::select::{topk_indices, zero_count};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StructureSpec {
    #[default]
    Unstructured,
    /// Keep exactly `n` of every `m` consecutive elements.
    #[serde(rename = "n_by_m")]
    NByM {
        n: usize,
        m: usize,
    },
    Block {
        block_dims: [usize; 2],
    },
}

impl StructureSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StructureSpec::Unstructured => Ok(()),
            StructureSpec::NByM { n, m } => {
                if n == 0 || n >= m {
                    Err(Error::Config(format!("N:M structure needs 0 < n < m, got {n}:{m}")))
                } else {
                    Ok(())
                }
            }
            StructureSpec::Block { block_dims } => {
                if block_dims.contains(&0) {
                    Err(Error::Config(format!(
                        "block dims must be positive, got {block_dims:?}"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// The sparsity an N:M pattern forces, if this is one.
    pub fn implied_sparsity(&self) -> Option<f64> {
        match *self {
            StructureSpec::NByM { n, m } => Some(1.0 - n as f64 / m as f64),
            _ => None,
        }
    }

    /// Checks that a parameter at `path` with `dims` can carry this
    /// structure.
    pub fn check_shape(&self, path: &str, dims: &[usize]) -> Result<()> {
        match *self {
            StructureSpec::Unstructured => Ok(()),
            StructureSpec::NByM { m, .. } => {
                let last = *dims.last().expect("tensors have rank >= 1");
                if !last.is_multiple_of(m) {
                    return Err(Error::structure(
                        path,
                        dims,
                        format!("last dimension {last} is not divisible by m={m}"),
                    ));
                }
                Ok(())
            }
            StructureSpec::Block { block_dims: [bh, bw] } => {
                if dims.len() < 2 {
                    return Err(Error::structure(path, dims, "block sparsity needs rank >= 2"));
                }
                if !dims[0].is_multiple_of(bh) || !dims[1].is_multiple_of(bw) {
                    return Err(Error::structure(
                        path,
                        dims,
                        format!("first two dimensions are not divisible by block {bh}x{bw}"),
                    ));
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for StructureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StructureSpec::Unstructured => f.write_str("unstructured"),
            StructureSpec::NByM { n, m } => write!(f, "{n}:{m}"),
            StructureSpec::Block { block_dims: [h, w] } => write!(f, "{h}x{w}"),
        }
    }
}

/// Parses `unstructured`, `N:M` (e.g. `2:4`) or `HxW` (e.g. `4x4`).
impl FromStr for StructureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "cannot parse structure `{s}`; expected unstructured, N:M or HxW"
            ))
        };
        let num = |x: &str| x.trim().parse::<usize>().map_err(|_| bad());
        let spec = if s.eq_ignore_ascii_case("unstructured") {
            StructureSpec::Unstructured
        } else if let Some((n, m)) = s.split_once(':') {
            StructureSpec::NByM { n: num(n)?, m: num(m)? }
        } else if let Some((h, w)) = s.split_once(['x', 'X']) {
            StructureSpec::Block {
                block_dims: [num(h)?, num(w)?],
            }
        } else {
            return Err(bad());
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Mask keeping the highest `scores` at `sparsity` under `spec`.
///
/// N:M ignores `sparsity`: the pattern alone fixes it at `1 - n/m`.
pub fn structured_mask(scores: &Tensor, sparsity: f64, spec: &StructureSpec) -> Result<Mask> {
    structured_mask_at("<tensor>", scores, sparsity, spec)
}

/// [`structured_mask`] with a parameter path for error messages.
pub fn structured_mask_at(path: &str, scores: &Tensor, sparsity: f64, spec: &StructureSpec) -> Result<Mask> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::Argument(format!("sparsity must be in [0, 1), got {sparsity}")));
    }
    spec.validate()?;
    spec.check_shape(path, scores.shape())?;
    let dims = scores.shape();
    let s = scores.data();
    let keep: Vec<usize> = match *spec {
        StructureSpec::Unstructured => {
            let n = s.len();
            topk_indices(s, n - zero_count(sparsity, n))?
        }
        StructureSpec::NByM { n, m } => {
            let mut keep = Vec::with_capacity(s.len() / m * n);
            for (g, group) in s.chunks_exact(m).enumerate() {
                keep.extend(topk_indices(group, n)?.into_iter().map(|i| g * m + i));
            }
            keep
        }
        StructureSpec::Block { block_dims: [bh, bw] } => {
            let (rows, cols) = (dims[0], dims[1]);
            let trailing = s.len() / (rows * cols);
            let (grid_r, grid_c) = (rows / bh, cols / bw);
            let n_blocks = grid_r * grid_c * trailing;
            let block_of = |i: usize, j: usize, r: usize| ((i / bh) * grid_c + j / bw) * trailing + r;

            let mut pooled = vec![0.0; n_blocks];
            for i in 0..rows {
                for j in 0..cols {
                    for r in 0..trailing {
                        pooled[block_of(i, j, r)] += s[(i * cols + j) * trailing + r];
                    }
                }
            }
            let area = (bh * bw) as f64;
            pooled.iter_mut().for_each(|v| *v /= area);

            let kept_blocks = topk_indices(&pooled, n_blocks - zero_count(sparsity, n_blocks))?;
            let mut kept = vec![false; n_blocks];
            for b in kept_blocks {
                kept[b] = true;
            }
            let mut keep = Vec::new();
            for i in 0..rows {
                for j in 0..cols {
                    for r in 0..trailing {
                        if kept[block_of(i, j, r)] {
                            keep.push((i * cols + j) * trailing + r);
                        }
                    }
                }
            }
            keep
        }
    };
    Ok(Mask::from_indices(dims, &keep))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn unstructured_example() {
        let m = structured_mask(
            &Tensor::from_vec(vec![0.3, 1.2, 0.7, 0.05]),
            0.5,
            &StructureSpec::Unstructured,
        )
        .unwrap();
        assert_eq!(m.to_bytes(), vec![0, 1, 1, 0]);
    }

    #[test]
    fn n_by_m_example() {
        let scores = Tensor::from_vec(vec![5.0, 1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 1.0]);
        let m = structured_mask(&scores, 0.0, &StructureSpec::NByM { n: 2, m: 4 }).unwrap();
        assert_eq!(m.to_bytes(), vec![1, 0, 0, 1, 1, 0, 0, 1]);
    }

    #[test]
    fn block_example() {
        let scores = tensor(&[2, 4], &[4.0, 4.0, 1.0, 1.0, 4.0, 4.0, 1.0, 1.0]);
        let m = structured_mask(&scores, 0.5, &StructureSpec::Block { block_dims: [2, 2] }).unwrap();
        assert_eq!(m.to_bytes(), vec![1, 1, 0, 0, 1, 1, 0, 0]);
    }

    #[test]
    fn one_by_one_blocks_match_unstructured() {
        let data: Vec<f64> = (0..24).map(|i| ((i * 7919) % 13) as f64).collect();
        let scores = tensor(&[4, 3, 2], &data);
        for s in [0.0, 0.25, 0.5, 0.9] {
            let a = structured_mask(&scores, s, &StructureSpec::Unstructured).unwrap();
            let b = structured_mask(&scores, s, &StructureSpec::Block { block_dims: [1, 1] }).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn divisibility_errors_name_the_path() {
        let scores = Tensor::ones(&[3, 6]);
        let err = structured_mask_at("layer0/kernel", &scores, 0.5, &StructureSpec::NByM { n: 2, m: 4 }).unwrap_err();
        match err {
            Error::Structure { path, dims, .. } => {
                assert_eq!(path, "layer0/kernel");
                assert_eq!(dims, vec![3, 6]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(structured_mask(&scores, 0.5, &StructureSpec::Block { block_dims: [2, 2] }).is_err());
        assert!(structured_mask(&Tensor::ones(&[8]), 0.5, &StructureSpec::Block { block_dims: [2, 2] }).is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(StructureSpec::NByM { n: 4, m: 4 }.validate().is_err());
        assert!(StructureSpec::NByM { n: 0, m: 4 }.validate().is_err());
        assert!(StructureSpec::Block { block_dims: [0, 2] }.validate().is_err());
        assert!(structured_mask(&Tensor::ones(&[4]), 1.0, &StructureSpec::Unstructured).is_err());
    }

    #[test]
    fn parse_and_display() {
        assert_eq!(
            "2:4".parse::<StructureSpec>().unwrap(),
            StructureSpec::NByM { n: 2, m: 4 }
        );
        assert_eq!(
            "4x1".parse::<StructureSpec>().unwrap(),
            StructureSpec::Block { block_dims: [4, 1] }
        );
        assert_eq!(
            "unstructured".parse::<StructureSpec>().unwrap(),
            StructureSpec::Unstructured
        );
        assert!("4:2".parse::<StructureSpec>().is_err());
        assert!("banana".parse::<StructureSpec>().is_err());
        assert_eq!(StructureSpec::NByM { n: 1, m: 8 }.to_string(), "1:8");
        let json: StructureSpec = serde_json::from_str(r#"{"kind":"n_by_m","n":2,"m":4}"#).unwrap();
        assert_eq!(json, StructureSpec::NByM { n: 2, m: 4 });
        let json: StructureSpec = serde_json::from_str(r#"{"kind":"block","block_dims":[4,4]}"#).unwrap();
        assert_eq!(json, StructureSpec::Block { block_dims: [4, 4] });
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn scores(n: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(0u16..200, n).prop_map(|v| v.into_iter().map(|x| f64::from(x) / 10.0).collect())
        }

        proptest! {
            #[test]
            fn unstructured_monotone(data in scores(60), a in 0.0f64..1.0, b in 0.0f64..1.0) {
                let t = tensor(&[6, 10], &data);
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let m_lo = structured_mask(&t, lo, &StructureSpec::Unstructured).unwrap().to_bytes();
                let m_hi = structured_mask(&t, hi, &StructureSpec::Unstructured).unwrap().to_bytes();
                prop_assert!(m_hi.iter().zip(&m_lo).all(|(h, l)| h <= l));
            }

            #[test]
            fn block_masks_are_blockwise(data in scores(96), s in 0.0f64..1.0) {
                let t = tensor(&[8, 6, 2], &data);
                let m = structured_mask(&t, s, &StructureSpec::Block { block_dims: [4, 3] }).unwrap().to_bytes();
                for bi in 0..2 { for bj in 0..2 { for r in 0..2 {
                    let first = m[((bi * 4) * 6 + bj * 3) * 2 + r];
                    for i in 0..4 { for j in 0..3 {
                        prop_assert_eq!(m[((bi * 4 + i) * 6 + bj * 3 + j) * 2 + r], first);
                    }}
                }}}
                let ones_blocks = m.iter().filter(|&&v| v == 1).count() / 12;
                prop_assert_eq!(ones_blocks, 8 - zero_count(s, 8));
            }
        }
    }
}
