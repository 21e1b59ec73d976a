//! The pruning and sparse-training algorithms, written as small hooks the
//! engine calls: score functions, mask recomputation for gradual pruning, the
//! straight-through projection, and drop/grow for dynamic sparse training.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::rng::RngKey;
use crate::select::{topk_among, topk_indices, zero_count};
use crate::structure::{structured_mask_at, StructureSpec};
use crate::tensor::{l2_norm, Tensor};
use crate::tree::ParamTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    #[serde(alias = "rand")]
    RandomPrune,
    #[serde(alias = "mag")]
    MagnitudePrune,
    #[serde(alias = "sal")]
    SaliencyPrune,
    #[serde(alias = "mag_g", alias = "mag-g")]
    GlobalMagnitudePrune,
    #[serde(alias = "ste")]
    SteMagnitude,
    #[serde(alias = "static")]
    StaticSparse,
    #[serde(alias = "set")]
    SetSparse,
    #[serde(alias = "rigl")]
    RiglSparse,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 8] = [
        AlgorithmKind::RandomPrune,
        AlgorithmKind::MagnitudePrune,
        AlgorithmKind::SaliencyPrune,
        AlgorithmKind::GlobalMagnitudePrune,
        AlgorithmKind::SteMagnitude,
        AlgorithmKind::StaticSparse,
        AlgorithmKind::SetSparse,
        AlgorithmKind::RiglSparse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::RandomPrune => "random_prune",
            AlgorithmKind::MagnitudePrune => "magnitude_prune",
            AlgorithmKind::SaliencyPrune => "saliency_prune",
            AlgorithmKind::GlobalMagnitudePrune => "global_magnitude_prune",
            AlgorithmKind::SteMagnitude => "ste_magnitude",
            AlgorithmKind::StaticSparse => "static_sparse",
            AlgorithmKind::SetSparse => "set_sparse",
            AlgorithmKind::RiglSparse => "rigl_sparse",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            AlgorithmKind::RandomPrune => "rand",
            AlgorithmKind::MagnitudePrune => "mag",
            AlgorithmKind::SaliencyPrune => "sal",
            AlgorithmKind::GlobalMagnitudePrune => "mag-g",
            AlgorithmKind::SteMagnitude => "ste",
            AlgorithmKind::StaticSparse => "static",
            AlgorithmKind::SetSparse => "set",
            AlgorithmKind::RiglSparse => "rigl",
        }
    }

    /// Needs gradients to update its masks.
    pub fn needs_grads(self) -> bool {
        matches!(
            self,
            AlgorithmKind::SaliencyPrune | AlgorithmKind::RiglSparse | AlgorithmKind::SteMagnitude
        )
    }

    /// Starts dense and raises sparsity along the schedule.
    pub fn is_gradual(self) -> bool {
        matches!(
            self,
            AlgorithmKind::RandomPrune
                | AlgorithmKind::MagnitudePrune
                | AlgorithmKind::SaliencyPrune
                | AlgorithmKind::GlobalMagnitudePrune
        )
    }

    /// Starts at its final sparsity from a random mask.
    pub fn is_sparse_training(self) -> bool {
        matches!(
            self,
            AlgorithmKind::StaticSparse | AlgorithmKind::SetSparse | AlgorithmKind::RiglSparse
        )
    }

    pub fn is_drop_grow(self) -> bool {
        matches!(self, AlgorithmKind::SetSparse | AlgorithmKind::RiglSparse)
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        AlgorithmKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.short_name() == s || k.short_name().replace('-', "_") == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

/// Cosine-decayed drop fraction for SET and RigL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropGrowConfig {
    pub initial_drop_fraction: f64,
}

impl Default for DropGrowConfig {
    fn default() -> Self {
        Self {
            initial_drop_fraction: 0.1,
        }
    }
}

impl DropGrowConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.initial_drop_fraction;
        if d > 0.0 && d < 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "initial drop fraction must be in (0, 1), got {d}"
            )))
        }
    }
}

/// `d0 / 2 * (1 + cos(pi * min(step, end) / end))`.
pub fn drop_fraction(cfg: &DropGrowConfig, step: u64, end_step: u64) -> Result<f64> {
    if end_step == 0 {
        return Err(Error::Config("drop fraction decay needs end_step > 0".into()));
    }
    let progress = step.min(end_step) as f64 / end_step as f64;
    Ok(cfg.initial_drop_fraction / 2.0 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Non-negative importance scores for every entry of `params`.
///
/// Magnitude-style kinds score `|w|`, saliency scores `|w * g|`, and the
/// random kinds draw U[0,1) from a per-path child of `rng`.
pub fn score(
    kind: AlgorithmKind,
    params: &ParamTree,
    grads: Option<&ParamTree>,
    rng: Option<RngKey>,
) -> Result<ParamTree> {
    match kind {
        AlgorithmKind::MagnitudePrune
        | AlgorithmKind::GlobalMagnitudePrune
        | AlgorithmKind::SteMagnitude
        | AlgorithmKind::RiglSparse => Ok(params.map(Tensor::abs)),
        AlgorithmKind::SaliencyPrune => {
            let grads = grads.ok_or_else(|| Error::Argument("saliency scores need gradients".into()))?;
            params.zip_map(grads, |w, g| (w * g).abs())
        }
        AlgorithmKind::RandomPrune | AlgorithmKind::StaticSparse | AlgorithmKind::SetSparse => {
            let key = rng.ok_or_else(|| Error::Argument("random scores need an rng key".into()))?;
            Ok(random_scores(params, key))
        }
    }
}

fn random_scores(params: &ParamTree, key: RngKey) -> ParamTree {
    params
        .iter()
        .map(|(path, t)| {
            let data = key.derive(path).uniforms(t.numel());
            (
                path.to_string(),
                Tensor::new(t.shape().to_vec(), data).expect("same shape"),
            )
        })
        .collect()
}

/// Layer-normalized magnitudes (`|w| / ||w||_2`) ranked together across the
/// given layers, keeping `total - round(sparsity * total)` coordinates.
/// Per-layer sparsity falls out of the global ranking.
pub fn global_magnitude_masks(params: &ParamTree, layers: &[&str], sparsity: f64) -> Result<BTreeMap<String, Mask>> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::Argument(format!("sparsity must be in [0, 1), got {sparsity}")));
    }
    let mut scores = Vec::new();
    let mut spans = Vec::with_capacity(layers.len());
    for &path in layers {
        let w = params
            .get(path)
            .ok_or_else(|| Error::Argument(format!("no parameter `{path}` for global pruning")))?;
        let norm = l2_norm(w);
        let start = scores.len();
        if norm > 0.0 {
            scores.extend(w.data().iter().map(|x| x.abs() / norm));
        } else {
            scores.extend(std::iter::repeat_n(0.0, w.numel()));
        }
        spans.push((path, w.shape(), start, scores.len()));
    }
    let total = scores.len();
    let keep = topk_indices(&scores, total - zero_count(sparsity, total))?;
    let mut flags = vec![false; total];
    for i in keep {
        flags[i] = true;
    }
    Ok(spans
        .into_iter()
        .map(|(path, shape, start, end)| {
            let local: Vec<usize> = (start..end).filter(|&i| flags[i]).map(|i| i - start).collect();
            (path.to_string(), Mask::from_indices(shape, &local))
        })
        .collect())
}

/// Recomputes gradual-pruning masks from current scores.
///
/// `sparsities` holds the already-scheduled sparsity of each layer to mask;
/// for global magnitude pruning every entry must carry the same global value.
pub fn gradual_prune_update(
    kind: AlgorithmKind,
    params: &ParamTree,
    grads: Option<&ParamTree>,
    sparsities: &BTreeMap<String, f64>,
    structure: &StructureSpec,
    rng: Option<RngKey>,
) -> Result<BTreeMap<String, Mask>> {
    if kind == AlgorithmKind::GlobalMagnitudePrune {
        let layers: Vec<&str> = sparsities.keys().map(String::as_str).collect();
        let Some(&global) = sparsities.values().next() else {
            return Ok(BTreeMap::new());
        };
        return global_magnitude_masks(params, &layers, global);
    }
    let scores = score(kind, params, grads, rng)?;
    sparsities
        .iter()
        .map(|(path, &s)| {
            let sc = scores
                .get(path)
                .ok_or_else(|| Error::Argument(format!("no parameter `{path}` to prune")))?;
            Ok((path.clone(), structured_mask_at(path, sc, s, structure)?))
        })
        .collect()
}

/// Masks for the straight-through forward pass: top-k magnitude at each
/// layer's current sparsity. Paths absent from `sparsities` are not
/// projected.
pub fn ste_masks(
    params: &ParamTree,
    sparsities: &BTreeMap<String, f64>,
    structure: &StructureSpec,
) -> Result<BTreeMap<String, Mask>> {
    gradual_prune_update(AlgorithmKind::SteMagnitude, params, None, sparsities, structure, None)
}

/// Sparse copy of `params` for the forward pass. The dense tree is left
/// alone; gradients computed at the projection are applied to it.
pub fn ste_forward_projection(
    params: &ParamTree,
    sparsities: &BTreeMap<String, f64>,
    structure: &StructureSpec,
) -> Result<ParamTree> {
    let masks = ste_masks(params, sparsities, structure)?;
    params
        .iter()
        .map(|(path, t)| {
            let out = match masks.get(path) {
                Some(m) => m.apply(t)?,
                None => t.clone(),
            };
            Ok((path.to_string(), out))
        })
        .collect()
}

/// What one drop/grow step did to a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DropGrow {
    pub mask: Mask,
    pub dropped: Vec<usize>,
    pub grown: Vec<usize>,
}

/// One SET/RigL step on a single layer.
///
/// Drops the `round(fraction * active)` active weights of smallest
/// magnitude, then grows as many previously inactive coordinates: uniformly
/// at random for SET (from `rng`), largest `|grad|` for RigL. The count is
/// clamped to the number of inactive coordinates, so the nonzero count never
/// changes.
pub fn drop_grow_update(
    kind: AlgorithmKind,
    mask: &Mask,
    weights: &Tensor,
    grads: Option<&Tensor>,
    rng: Option<RngKey>,
    fraction: f64,
) -> Result<DropGrow> {
    if !kind.is_drop_grow() {
        return Err(Error::Argument(format!("{kind} does not drop and grow")));
    }
    if mask.shape() != weights.shape() {
        return Err(Error::Shape(format!(
            "mask {:?} vs weights {:?}",
            mask.shape(),
            weights.shape()
        )));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Argument(format!(
            "drop fraction must be in [0, 1], got {fraction}"
        )));
    }
    let bits = mask.to_bools();
    let (active, inactive): (Vec<usize>, Vec<usize>) = (0..bits.len()).partition(|&i| bits[i]);
    let k = zero_count(fraction, active.len()).min(inactive.len());
    if k == 0 {
        return Ok(DropGrow {
            mask: mask.clone(),
            dropped: Vec::new(),
            grown: Vec::new(),
        });
    }

    let magnitude: Vec<f64> = weights.data().iter().map(|w| w.abs()).collect();
    let kept = topk_among(&magnitude, &active, active.len() - k)?;
    let dropped: Vec<usize> = {
        let mut is_kept = vec![false; bits.len()];
        kept.iter().for_each(|&i| is_kept[i] = true);
        active.iter().copied().filter(|&i| !is_kept[i]).collect()
    };

    let grow_scores: Vec<f64> = match kind {
        AlgorithmKind::SetSparse => {
            let key = rng.ok_or_else(|| Error::Argument("SET growth needs an rng key".into()))?;
            key.uniforms(bits.len())
        }
        _ => {
            let g = grads.ok_or_else(|| Error::Argument("RigL growth needs gradients".into()))?;
            if g.shape() != weights.shape() {
                return Err(Error::Shape(format!(
                    "grads {:?} vs weights {:?}",
                    g.shape(),
                    weights.shape()
                )));
            }
            g.data().iter().map(|x| x.abs()).collect()
        }
    };
    let grown = topk_among(&grow_scores, &inactive, k)?;

    let mut keep = kept;
    keep.extend(&grown);
    Ok(DropGrow {
        mask: Mask::from_indices(mask.shape(), &keep),
        dropped,
        grown,
    })
}

/// A random mask at `sparsity`: uniform scores through structured top-k.
pub fn static_init(path: &str, shape: &[usize], sparsity: f64, structure: &StructureSpec, rng: RngKey) -> Result<Mask> {
    let n = shape.iter().product();
    let scores = Tensor::new(shape.to_vec(), rng.uniforms(n))?;
    structured_mask_at(path, &scores, sparsity, structure)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn score_examples() {
        let p = ParamTree::new().with("w", t(&[-3.0, 0.5]));
        let s = score(AlgorithmKind::MagnitudePrune, &p, None, None).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[3.0, 0.5]);

        let p = ParamTree::new().with("w", t(&[2.0, -1.0]));
        let g = ParamTree::new().with("w", t(&[0.1, 0.5]));
        let s = score(AlgorithmKind::SaliencyPrune, &p, Some(&g), None).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[0.2, 0.5]);
        let m = structured_mask_at("w", s.get("w").unwrap(), 0.5, &StructureSpec::Unstructured).unwrap();
        assert_eq!(m.to_bytes(), vec![0, 1]);

        let key = RngKey::new(3);
        let a = score(AlgorithmKind::RandomPrune, &p, None, Some(key)).unwrap();
        let b = score(AlgorithmKind::RandomPrune, &p, None, Some(key)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn score_requires_inputs() {
        let p = ParamTree::new().with("w", t(&[1.0]));
        assert!(matches!(
            score(AlgorithmKind::SaliencyPrune, &p, None, None),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            score(AlgorithmKind::RandomPrune, &p, None, None),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn global_magnitude_example() {
        let p = ParamTree::new().with("a", t(&[3.0, 4.0])).with("b", t(&[1.0, 0.0]));
        let m = global_magnitude_masks(&p, &["a", "b"], 0.5).unwrap();
        assert_eq!(m["a"].to_bytes(), vec![0, 1]);
        assert_eq!(m["b"].to_bytes(), vec![1, 0]);

        let scaled = ParamTree::new().with("a", t(&[30.0, 40.0])).with("b", t(&[1.0, 0.0]));
        assert_eq!(global_magnitude_masks(&scaled, &["a", "b"], 0.5).unwrap(), m);
    }

    #[test]
    fn global_single_layer_matches_per_layer() {
        let w = t(&[0.3, -1.2, 0.7, 0.05, 2.0, -0.4]);
        let p = ParamTree::new().with("w", w.clone());
        for s in [0.0, 0.3, 0.5, 0.8] {
            let g = global_magnitude_masks(&p, &["w"], s).unwrap();
            let l = structured_mask_at("w", &w.abs(), s, &StructureSpec::Unstructured).unwrap();
            assert_eq!(g["w"], l);
        }
    }

    #[test]
    fn gradual_masks_nest() {
        let p = ParamTree::new().with("w", t(&[4.0, 3.0, 2.0, 1.0]));
        let at = |s: f64| {
            let sp = BTreeMap::from([("w".to_string(), s)]);
            gradual_prune_update(
                AlgorithmKind::MagnitudePrune,
                &p,
                None,
                &sp,
                &StructureSpec::Unstructured,
                None,
            )
            .unwrap()["w"]
                .to_bytes()
        };
        assert_eq!(at(0.5), vec![1, 1, 0, 0]);
        assert_eq!(at(0.75), vec![1, 0, 0, 0]);
    }

    #[test]
    fn ste_projection_examples() {
        let p = ParamTree::new().with("w", t(&[0.3, 1.2, 0.7, 0.05]));
        let half = BTreeMap::from([("w".to_string(), 0.5)]);
        let fwd = ste_forward_projection(&p, &half, &StructureSpec::Unstructured).unwrap();
        assert_eq!(fwd.get("w").unwrap().data(), &[0.0, 1.2, 0.7, 0.0]);
        assert_eq!(p.get("w").unwrap().data(), &[0.3, 1.2, 0.7, 0.05]);
        let zero = BTreeMap::from([("w".to_string(), 0.0)]);
        assert_eq!(
            ste_forward_projection(&p, &zero, &StructureSpec::Unstructured).unwrap(),
            p
        );
    }

    #[test]
    fn drop_fraction_examples() {
        let cfg = DropGrowConfig::default();
        assert_eq!(drop_fraction(&cfg, 0, 100).unwrap(), 0.1);
        assert!(drop_fraction(&cfg, 100, 100).unwrap().abs() < 1e-17);
        assert!((drop_fraction(&cfg, 50, 100).unwrap() - 0.05).abs() < 1e-15);
        assert!(drop_fraction(&cfg, 500, 100).unwrap().abs() < 1e-17);
        assert!(drop_fraction(&cfg, 0, 0).is_err());
        assert!(DropGrowConfig {
            initial_drop_fraction: 1.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn rigl_example() {
        let w = t(&[0.9, 0.1, 0.0, 0.0]);
        let mask = Mask::from_bytes(vec![4], vec![1, 1, 0, 0]).unwrap();
        let g = t(&[0.0, 0.0, 5.0, 1.0]);
        let out = drop_grow_update(AlgorithmKind::RiglSparse, &mask, &w, Some(&g), None, 0.5).unwrap();
        assert_eq!(out.dropped, vec![1]);
        assert_eq!(out.grown, vec![2]);
        assert_eq!(out.mask.to_bytes(), vec![1, 0, 1, 0]);
    }

    #[test]
    fn zero_fraction_keeps_mask() {
        let w = t(&[0.9, 0.1, 0.0, 0.0]);
        let mask = Mask::from_bytes(vec![4], vec![1, 1, 0, 0]).unwrap();
        let out = drop_grow_update(AlgorithmKind::SetSparse, &mask, &w, None, Some(RngKey::new(0)), 0.0).unwrap();
        assert_eq!(out.mask, mask);
        assert!(out.dropped.is_empty() && out.grown.is_empty());
    }

    #[test]
    fn set_growth_is_seeded() {
        let w = Tensor::from_vec((0..20).map(|i| if i < 10 { 1.0 + i as f64 } else { 0.0 }).collect());
        let mask = Mask::from_indices(&[20], &(0..10).collect::<Vec<_>>());
        let key = RngKey::new(11).derive("grow");
        let a = drop_grow_update(AlgorithmKind::SetSparse, &mask, &w, None, Some(key), 0.3).unwrap();
        let b = drop_grow_update(AlgorithmKind::SetSparse, &mask, &w, None, Some(key), 0.3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dropped, vec![0, 1, 2]);
        assert!(a.grown.iter().all(|&i| i >= 10));
        assert_eq!(a.mask.count_ones(), 10);
    }

    #[test]
    fn drop_is_clamped_by_inactive_count() {
        let w = t(&[1.0, 2.0, 3.0, 0.0]);
        let mask = Mask::from_bytes(vec![4], vec![1, 1, 1, 0]).unwrap();
        let g = t(&[0.0, 0.0, 0.0, 1.0]);
        let out = drop_grow_update(AlgorithmKind::RiglSparse, &mask, &w, Some(&g), None, 0.9).unwrap();
        assert_eq!(out.dropped.len(), 1);
        assert_eq!(out.grown, vec![3]);
        assert_eq!(out.mask.count_ones(), 3);
    }

    #[test]
    fn static_init_cardinality_and_seeds() {
        let m = static_init("w", &[10], 0.8, &StructureSpec::Unstructured, RngKey::new(1)).unwrap();
        assert_eq!(m.count_ones(), 2);
        let masks: Vec<Vec<u8>> = (0..20)
            .map(|s| {
                static_init("w", &[10], 0.8, &StructureSpec::Unstructured, RngKey::new(s))
                    .unwrap()
                    .to_bytes()
            })
            .collect();
        assert!(masks.iter().any(|m| m != &masks[0]));
    }

    #[test]
    fn algorithm_names() {
        for k in AlgorithmKind::ALL {
            assert_eq!(k.name().parse::<AlgorithmKind>().unwrap(), k);
            assert_eq!(k.short_name().parse::<AlgorithmKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(serde_json::from_str::<AlgorithmKind>(&json).unwrap(), k);
        }
        assert_eq!(
            serde_json::from_str::<AlgorithmKind>("\"mag\"").unwrap(),
            AlgorithmKind::MagnitudePrune
        );
        assert!("lottery".parse::<AlgorithmKind>().is_err());
    }
}
