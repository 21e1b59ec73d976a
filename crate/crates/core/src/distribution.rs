//! Per-layer sparsity targets: uniform, Erdős–Rényi-Kernel (ERK), or an
//! explicit map, restricted to the parameters a filter selects.

use std::collections::BTreeMap;

use glob::Pattern;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::select::zero_count;
use crate::tree::ParamTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    Uniform,
    Erk,
    CustomMap,
}

/// Which parameters get sparsified.
///
/// A parameter is selected when it passes [`default_filter`] (unless
/// `keep_rank1_dense` is off), matches no `exclude` pattern, and matches an
/// `include` pattern when any are given. Patterns are shell globs over the
/// parameter path, e.g. `"embed/*"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    pub keep_rank1_dense: bool,
    pub exclude: Vec<String>,
    pub include: Vec<String>,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            keep_rank1_dense: true,
            exclude: Vec::new(),
            include: Vec::new(),
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        for p in self.exclude.iter().chain(&self.include) {
            Pattern::new(p).map_err(|e| Error::Config(format!("bad filter pattern `{p}`: {e}")))?;
        }
        Ok(())
    }

    /// True when `path` should be sparsified.
    pub fn selects(&self, path: &str, shape: &[usize]) -> bool {
        let matches = |p: &String| Pattern::new(p).map(|pat| pat.matches(path)).unwrap_or(false);
        (!self.keep_rank1_dense || default_filter(path, shape))
            && !self.exclude.iter().any(matches)
            && (self.include.is_empty() || self.include.iter().any(matches))
    }
}

/// Rank-1 parameters (biases, norm scales) stay dense; everything else is
/// eligible for sparsity.
pub fn default_filter(_path: &str, shape: &[usize]) -> bool {
    shape.len() != 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    pub target_sparsity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub filter: FilterSpec,
}

impl DistributionSpec {
    pub fn uniform(target_sparsity: f64) -> Self {
        Self {
            kind: DistributionKind::Uniform,
            target_sparsity,
            custom: None,
            filter: FilterSpec::default(),
        }
    }

    pub fn erk(target_sparsity: f64) -> Self {
        Self {
            kind: DistributionKind::Erk,
            ..Self::uniform(target_sparsity)
        }
    }

    pub fn custom(map: BTreeMap<String, f64>) -> Self {
        Self {
            kind: DistributionKind::CustomMap,
            custom: Some(map),
            ..Self::uniform(0.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.target_sparsity) {
            return Err(Error::Config(format!(
                "target_sparsity must be in [0, 1), got {}",
                self.target_sparsity
            )));
        }
        if let Some(map) = &self.custom {
            if let Some((path, s)) = map.iter().find(|(_, s)| !(0.0..1.0).contains(*s)) {
                return Err(Error::Config(format!(
                    "custom sparsity for `{path}` must be in [0, 1), got {s}"
                )));
            }
        }
        if self.kind == DistributionKind::CustomMap && self.custom.is_none() {
            return Err(Error::Config("custom_map distribution needs a `custom` map".into()));
        }
        self.filter.validate()
    }

    pub fn selects(&self, path: &str, shape: &[usize]) -> bool {
        self.filter.selects(path, shape)
    }
}

/// Target sparsity for every path of `params`; filtered-out paths get 0.
pub fn compute_distribution(spec: &DistributionSpec, params: &ParamTree) -> Result<BTreeMap<String, f64>> {
    compute_distribution_with(spec, params, |path, shape| spec.selects(path, shape))
}

/// [`compute_distribution`] with a caller-supplied selection predicate in
/// place of `spec.filter`.
pub fn compute_distribution_with(
    spec: &DistributionSpec,
    params: &ParamTree,
    selects: impl Fn(&str, &[usize]) -> bool,
) -> Result<BTreeMap<String, f64>> {
    if params.is_empty() {
        return Err(Error::Config("cannot distribute sparsity over an empty tree".into()));
    }
    spec.validate()?;
    let mut out: BTreeMap<String, f64> = params.paths().map(|p| (p.to_string(), 0.0)).collect();
    let selected: Vec<(&str, &[usize])> = params
        .iter()
        .filter(|(p, t)| selects(p, t.shape()))
        .map(|(p, t)| (p, t.shape()))
        .collect();

    match spec.kind {
        DistributionKind::Uniform => {
            for (path, _) in &selected {
                out.insert(path.to_string(), spec.target_sparsity);
            }
        }
        DistributionKind::CustomMap => {
            let map = spec.custom.as_ref().expect("validated");
            for (path, _) in &selected {
                let s = map
                    .get(*path)
                    .ok_or_else(|| Error::Config(format!("custom sparsity map has no entry for `{path}`")))?;
                out.insert(path.to_string(), *s);
            }
        }
        DistributionKind::Erk => {
            let shapes: Vec<Vec<usize>> = selected.iter().map(|(_, s)| s.to_vec()).collect();
            let sparsities = erk_sparsities(&shapes, spec.target_sparsity)?;
            for ((path, _), s) in selected.iter().zip(sparsities) {
                out.insert(path.to_string(), s);
            }
        }
    }
    Ok(out)
}

/// ERK per-layer sparsities for `shapes` at overall `target`.
///
/// Density of layer `l` is `min(1, eps * sum(dims) / prod(dims))`. Layers
/// that would exceed density 1 are pinned dense and `eps` is re-solved over
/// the rest. Per-layer zero counts are then reconciled so the total zero
/// count equals `round(target * total)`.
pub fn erk_sparsities(shapes: &[Vec<usize>], target: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::Config(format!("ERK target must be in [0, 1), got {target}")));
    }
    let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    if shapes.is_empty() || target == 0.0 {
        return Ok(vec![0.0; shapes.len()]);
    }
    if shapes.len() == 1 {
        return Ok(vec![target]);
    }
    let raw: Vec<f64> = shapes
        .iter()
        .zip(&sizes)
        .map(|(s, &n)| s.iter().sum::<usize>() as f64 / n as f64)
        .collect();
    let total: usize = sizes.iter().sum();

    let mut dense = vec![false; shapes.len()];
    let eps = loop {
        let dense_params: usize = sizes.iter().zip(&dense).filter(|(_, &d)| d).map(|(n, _)| n).sum();
        let budget = (1.0 - target) * total as f64 - dense_params as f64;
        let denom: f64 = (0..shapes.len())
            .filter(|&l| !dense[l])
            .map(|l| raw[l] * sizes[l] as f64)
            .sum();
        if denom == 0.0 || budget <= 0.0 {
            return Err(Error::Config(format!(
                "ERK cannot reach sparsity {target}: every layer is capped at density 1"
            )));
        }
        let eps = budget / denom;
        let mut capped_any = false;
        for l in 0..shapes.len() {
            if !dense[l] && eps * raw[l] > 1.0 {
                dense[l] = true;
                capped_any = true;
            }
        }
        if !capped_any {
            break eps;
        }
    };

    let mut sparsity: Vec<f64> = (0..shapes.len())
        .map(|l| if dense[l] { 0.0 } else { 1.0 - eps * raw[l] })
        .collect();

    // Reconcile rounding so total zeros land on round(target * total).
    let mut zeros: Vec<usize> = sparsity.iter().zip(&sizes).map(|(&s, &n)| zero_count(s, n)).collect();
    let want = zero_count(target, total) as i64;
    let mut diff = want - zeros.iter().sum::<usize>() as i64;
    let ideal = sparsity.clone();
    let residual = |l: usize, z: usize| ideal[l] * sizes[l] as f64 - z as f64;
    while diff != 0 {
        let pick = (0..shapes.len())
            .filter(|&l| !dense[l])
            .filter(|&l| {
                if diff > 0 {
                    zeros[l] + 1 < sizes[l]
                } else {
                    zeros[l] > 0
                }
            })
            .map(|l| (l, residual(l, zeros[l])))
            .max_by(|a, b| {
                let ord = a.1.total_cmp(&b.1);
                if diff > 0 {
                    ord
                } else {
                    ord.reverse()
                }
            });
        let Some((l, _)) = pick else { break };
        if diff > 0 {
            zeros[l] += 1;
            diff -= 1;
        } else {
            zeros[l] -= 1;
            diff += 1;
        }
        sparsity[l] = zeros[l] as f64 / sizes[l] as f64;
    }
    Ok(sparsity)
}
