//! The sparsity updater and the optimizer wrapper built from it.
//!
//! A [`SparsityUpdater`] is stateless: it holds only its configuration. All
//! mutable data (masks, targets, counters, the inner optimizer's state) lives
//! in a [`SparsityState`] that travels with the optimizer state. Training
//! integrates in four steps:
//!
//! ```
//! use sparsekit::prelude::*;
//!
//! let params = ParamTree::new().with("w", Tensor::new(vec![2, 2], vec![0.1, -2.0, 0.5, 3.0]).unwrap());
//! let updater = SparsityUpdater::new(UpdaterConfig::new(
//!     AlgorithmKind::MagnitudePrune,
//!     DistributionSpec::uniform(0.5),
//!     ScheduleConfig::one_shot(0, 0.5),
//! ))
//! .unwrap();
//! let tx = updater.wrap_optimizer(sgd(0.1).unwrap());
//! let mut state = tx.init(&params).unwrap();
//!
//! let forward = updater.pre_forward_update(&params, &state).unwrap();
//! let grads = forward.zeros_like();
//! let (updates, next) = tx.update(&grads, &state, &params).unwrap();
//! state = next;
//! let params = updater.post_gradient_update(&apply_updates(&params, &updates).unwrap(), &state).unwrap();
//! assert_eq!(params.get("w").unwrap().count_nonzero(), 2);
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::algorithms::{
    drop_fraction, drop_grow_update, gradual_prune_update, score, static_init, ste_masks, AlgorithmKind, DropGrowConfig,
};
use crate::distribution::{compute_distribution, DistributionSpec};
use crate::error::{Error, Result};
use crate::mask::{EncodingKind, Mask, MaskTree};
use crate::optim::{GradientTransformation, OptState};
use crate::rng::RngKey;
use crate::schedule::{ScheduleConfig, ScheduleKind};
use crate::structure::{structured_mask_at, StructureSpec};
use crate::tensor::Tensor;
use crate::tree::{check_same_topology, ParamTree};

fn default_drop_fraction() -> f64 {
    DropGrowConfig::default().initial_drop_fraction
}

/// Everything that defines one experiment arm's sparsity behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdaterConfig {
    pub algorithm: AlgorithmKind,
    /// Initial drop fraction for SET and RigL.
    #[serde(default = "default_drop_fraction")]
    pub drop_fraction: f64,
    pub distribution: DistributionSpec,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub structure: StructureSpec,
    #[serde(default)]
    pub use_packed_masks: bool,
    #[serde(default)]
    pub rng_seed: u64,
}

impl UpdaterConfig {
    pub fn new(algorithm: AlgorithmKind, distribution: DistributionSpec, schedule: ScheduleConfig) -> Self {
        Self {
            algorithm,
            drop_fraction: default_drop_fraction(),
            distribution,
            schedule,
            structure: StructureSpec::Unstructured,
            use_packed_masks: false,
            rng_seed: 0,
        }
    }

    /// Zero sparsity, never updated: the wrapper becomes a pass-through.
    pub fn dense() -> Self {
        Self::new(
            AlgorithmKind::MagnitudePrune,
            DistributionSpec::uniform(0.0),
            ScheduleConfig::no_update(0.0),
        )
    }

    pub fn with_structure(mut self, structure: StructureSpec) -> Self {
        self.structure = structure;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn with_packed_masks(mut self, packed: bool) -> Self {
        self.use_packed_masks = packed;
        self
    }

    pub fn drop_grow(&self) -> DropGrowConfig {
        DropGrowConfig {
            initial_drop_fraction: self.drop_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.distribution.validate()?;
        self.schedule.validate()?;
        self.structure.validate()?;
        let structured = self.structure != StructureSpec::Unstructured;
        if structured && matches!(self.algorithm, AlgorithmKind::GlobalMagnitudePrune) {
            return Err(Error::Config(
                "global magnitude pruning only supports unstructured sparsity".into(),
            ));
        }
        if self.algorithm.is_drop_grow() {
            if structured {
                return Err(Error::Config(format!(
                    "{} only supports unstructured sparsity",
                    self.algorithm
                )));
            }
            self.drop_grow().validate()?;
            if self.schedule.kind != ScheduleKind::NoUpdate && self.schedule.end_step == 0 {
                return Err(Error::Config(format!(
                    "{} needs schedule end_step > 0 for drop-fraction decay",
                    self.algorithm
                )));
            }
        }
        Ok(())
    }

    fn encoding(&self) -> EncodingKind {
        if self.use_packed_masks {
            EncodingKind::Packed
        } else {
            EncodingKind::Bytes
        }
    }
}

/// Mutable sparsity state carried through training alongside the inner
/// optimizer's state.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityState {
    pub masks: MaskTree,
    /// Final target sparsity of each path (0 for dense paths).
    pub per_layer_targets: BTreeMap<String, f64>,
    pub step: u64,
    pub inner: OptState,
    /// Extra per-algorithm trees; none of the built-in algorithms need any.
    pub algo_slots: BTreeMap<String, ParamTree>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityUpdater {
    config: UpdaterConfig,
}

impl SparsityUpdater {
    pub fn new(config: UpdaterConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &UpdaterConfig {
        &self.config
    }

    pub fn algorithm(&self) -> AlgorithmKind {
        self.config.algorithm
    }

    /// Wraps `inner` so that its state also carries the sparsity state and
    /// its updates respect the masks.
    pub fn wrap_optimizer<T>(&self, inner: T) -> Sparsified<T>
    where
        T: GradientTransformation<State = OptState>,
    {
        Sparsified {
            updater: self.clone(),
            inner,
        }
    }

    fn key(&self, purpose: &str) -> RngKey {
        RngKey::new(self.config.rng_seed).derive(purpose)
    }

    fn selects(&self, path: &str, shape: &[usize]) -> bool {
        self.config.distribution.selects(path, shape)
    }

    /// Per-layer final targets, after checking every selected layer can
    /// carry the configured structure.
    fn targets(&self, params: &ParamTree) -> Result<BTreeMap<String, f64>> {
        for (path, t) in params.iter() {
            if self.selects(path, t.shape()) {
                self.config.structure.check_shape(path, t.shape())?;
            }
        }
        let targets = compute_distribution(&self.config.distribution, params)?;
        if let Some(implied) = self.config.structure.implied_sparsity() {
            let mismatched = params
                .iter()
                .filter(|(p, t)| self.selects(p, t.shape()))
                .find(|(p, _)| (targets[*p] - implied).abs() > 1e-9);
            if let Some((path, _)) = mismatched {
                return Err(Error::Config(format!(
                    "{} structure fixes sparsity at {implied}, but `{path}` targets {}",
                    self.config.structure, targets[path]
                )));
            }
        }
        Ok(targets)
    }

    /// Sparsity a masked layer should have at `step`.
    pub fn scheduled_sparsity(&self, target: f64, step: u64) -> f64 {
        self.config.schedule.retarget(target).current_sparsity(step)
    }

    fn scheduled(&self, state: &SparsityState, step: u64) -> BTreeMap<String, f64> {
        let global = matches!(self.config.algorithm, AlgorithmKind::GlobalMagnitudePrune)
            .then(|| self.scheduled_sparsity(self.config.distribution.target_sparsity, step));
        state
            .masks
            .masks
            .keys()
            .map(|path| {
                let s = global.unwrap_or_else(|| self.scheduled_sparsity(state.per_layer_targets[path], step));
                (path.clone(), s)
            })
            .collect()
    }

    /// Builds the initial sparsity state around an already-initialized inner
    /// optimizer state.
    pub fn init_state(&self, params: &ParamTree, inner: OptState) -> Result<SparsityState> {
        let per_layer_targets = self.targets(params)?;
        let mut masks = MaskTree::ones_for(params, |p, s| self.selects(p, s));
        let mut state = SparsityState {
            masks: MaskTree::default(),
            per_layer_targets,
            step: 0,
            inner,
            algo_slots: BTreeMap::new(),
        };
        if self.config.algorithm.is_sparse_training() {
            let key = self.key("init");
            for (path, mask) in masks.masks.iter_mut() {
                let target = state.per_layer_targets[path];
                *mask = static_init(path, mask.shape(), target, &self.config.structure, key.derive(path))?;
            }
        } else if self.config.algorithm == AlgorithmKind::SteMagnitude {
            state.masks = masks.clone();
            let sparsities = self.scheduled(&state, 0);
            masks.masks = ste_masks(params, &sparsities, &self.config.structure)?;
        }
        state.masks = masks.encoded(self.config.encoding());
        Ok(state)
    }

    /// Recomputes masks for the current step. Callers gate this on the
    /// schedule; straight-through masks are refreshed every step.
    pub fn update_masks(
        &self,
        state: &SparsityState,
        params: &ParamTree,
        grads: Option<&ParamTree>,
    ) -> Result<MaskTree> {
        let step = state.step;
        let kind = self.config.algorithm;
        let structure = &self.config.structure;
        let mut masks = state.masks.clone();
        let fresh = match kind {
            AlgorithmKind::StaticSparse => return Ok(masks),
            AlgorithmKind::SteMagnitude => ste_masks(params, &self.scheduled(state, step), structure)?,
            AlgorithmKind::SetSparse | AlgorithmKind::RiglSparse => {
                let fraction = drop_fraction(&self.config.drop_grow(), step, self.config.schedule.end_step)?;
                let key = self.key("grow").fold_in(step);
                let mut out = BTreeMap::new();
                for (path, mask) in &state.masks.masks {
                    let w = params
                        .get(path)
                        .ok_or_else(|| Error::Argument(format!("no parameter `{path}`")))?;
                    let g = match grads {
                        Some(g) => Some(
                            g.get(path)
                                .ok_or_else(|| Error::Argument(format!("no gradient `{path}`")))?,
                        ),
                        None => None,
                    };
                    let step_out = drop_grow_update(kind, mask, w, g, Some(key.derive(path)), fraction)?;
                    out.insert(path.clone(), step_out.mask);
                }
                out
            }
            _ => {
                let key = self.key("score").fold_in(step);
                gradual_prune_update(kind, params, grads, &self.scheduled(state, step), structure, Some(key))?
            }
        };
        for (path, m) in fresh {
            masks.masks.insert(path, m);
        }
        Ok(masks.encoded(self.config.encoding()))
    }

    /// Parameters for the forward pass. Straight-through estimation projects
    /// onto the current top-k; every other algorithm returns `params`.
    pub fn pre_forward_update(&self, params: &ParamTree, state: &SparsityState) -> Result<ParamTree> {
        state.masks.check_covers(params)?;
        if self.config.algorithm != AlgorithmKind::SteMagnitude {
            return Ok(params.clone());
        }
        let masks = ste_masks(params, &self.scheduled(state, state.step), &self.config.structure)?;
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

    /// Masks `params` after an optimizer step. Identity for straight-through
    /// estimation, whose dense parameters are never masked.
    pub fn post_gradient_update(&self, params: &ParamTree, state: &SparsityState) -> Result<ParamTree> {
        if self.config.algorithm == AlgorithmKind::SteMagnitude {
            state.masks.check_covers(params)?;
            return Ok(params.clone());
        }
        state.masks.apply(params)
    }

    /// Masks that one-shot pruning of `params` at the final targets would
    /// produce. Gradient-based criteria have no gradients here and are
    /// rejected.
    pub fn instant_masks(&self, params: &ParamTree) -> Result<MaskTree> {
        self.check_instant()?;
        let targets = self.targets(params)?;
        let mut masks = MaskTree::ones_for(params, |p, s| self.selects(p, s));
        if self.config.algorithm == AlgorithmKind::GlobalMagnitudePrune {
            let layers: Vec<&str> = masks.masks.keys().map(String::as_str).collect();
            let fresh =
                crate::algorithms::global_magnitude_masks(params, &layers, self.config.distribution.target_sparsity)?;
            masks.masks = fresh;
        } else {
            let scores = score(self.config.algorithm, params, None, Some(self.key("instant")))?;
            for (path, mask) in masks.masks.iter_mut() {
                *mask = structured_mask_at(
                    path,
                    &scores.get(path).expect("same tree").clone(),
                    targets[path],
                    &self.config.structure,
                )?;
            }
        }
        Ok(masks.encoded(self.config.encoding()))
    }

    /// One-shot pruning outside training; see [`Sparsify`].
    pub fn instant_sparsify<T: Sparsify>(&self, target: &T) -> Result<T> {
        target.sparsify_with(self)
    }

    fn check_instant(&self) -> Result<()> {
        match self.config.algorithm {
            AlgorithmKind::SaliencyPrune | AlgorithmKind::RiglSparse => Err(Error::Unsupported(format!(
                "{} needs gradients and cannot prune instantly",
                self.config.algorithm
            ))),
            _ => Ok(()),
        }
    }
}

/// Things [`SparsityUpdater::instant_sparsify`] accepts.
///
/// Trees go through the distribution and filter; a lone tensor is pruned
/// directly at the distribution's `target_sparsity`.
pub trait Sparsify: Sized {
    fn sparsify_with(&self, updater: &SparsityUpdater) -> Result<Self>;
}

impl Sparsify for ParamTree {
    fn sparsify_with(&self, updater: &SparsityUpdater) -> Result<Self> {
        updater.instant_masks(self)?.apply(self)
    }
}

impl Sparsify for Tensor {
    fn sparsify_with(&self, updater: &SparsityUpdater) -> Result<Self> {
        updater.check_instant()?;
        let cfg = updater.config();
        let sparsity = cfg.distribution.target_sparsity;
        let mask: Mask = if cfg.algorithm == AlgorithmKind::GlobalMagnitudePrune {
            structured_mask_at("<tensor>", &self.abs(), sparsity, &StructureSpec::Unstructured)?
        } else {
            let tree = ParamTree::new().with("<tensor>", self.clone());
            let scores = score(cfg.algorithm, &tree, None, Some(updater.key("instant")))?;
            structured_mask_at(
                "<tensor>",
                scores.get("<tensor>").expect("present"),
                sparsity,
                &cfg.structure,
            )?
        };
        mask.apply(self)
    }
}

/// An inner optimizer wrapped with a sparsity updater.
pub struct Sparsified<T> {
    updater: SparsityUpdater,
    inner: T,
}

impl<T> Sparsified<T> {
    pub fn updater(&self) -> &SparsityUpdater {
        &self.updater
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }
}

impl<T> GradientTransformation for Sparsified<T>
where
    T: GradientTransformation<State = OptState>,
{
    type State = SparsityState;

    fn init(&self, params: &ParamTree) -> Result<SparsityState> {
        self.updater.init_state(params, self.inner.init(params)?)
    }

    /// Runs the mask hook when the schedule fires, delegates to the inner
    /// optimizer, then rewrites updates so masked coordinates land on zero
    /// and newly grown coordinates restart from zero. Straight-through
    /// updates pass through unmasked.
    fn update(
        &self,
        grads: &ParamTree,
        state: &SparsityState,
        params: &ParamTree,
    ) -> Result<(ParamTree, SparsityState)> {
        check_same_topology(grads, params)?;
        state.masks.check_covers(params)?;
        let cfg = self.updater.config();
        let is_ste = cfg.algorithm == AlgorithmKind::SteMagnitude;

        let masks = if is_ste || cfg.schedule.should_update(state.step) {
            self.updater.update_masks(state, params, Some(grads))?
        } else {
            state.masks.clone()
        };

        let (updates, inner) = self.inner.update(grads, &state.inner, params)?;

        let updates = if is_ste {
            updates
        } else {
            updates
                .iter()
                .map(|(path, u)| {
                    let Some(new) = masks.get(path) else {
                        return Ok((path.to_string(), u.clone()));
                    };
                    let old = state.masks.get(path).expect("same mask layout").to_bools();
                    let p = params.get(path).expect("checked topology");
                    let data = u
                        .data()
                        .iter()
                        .zip(p.data())
                        .zip(new.to_bools().into_iter().zip(old))
                        .map(|((&u, &p), (keep, was_kept))| if keep && was_kept { u } else { -p })
                        .collect();
                    Ok((path.to_string(), Tensor::new(u.shape().to_vec(), data)?))
                })
                .collect::<Result<ParamTree>>()?
        };

        let next = SparsityState {
            masks,
            per_layer_targets: state.per_layer_targets.clone(),
            step: state.step + 1,
            inner,
            algo_slots: state.algo_slots.clone(),
        };
        Ok((updates, next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{adam, apply_updates, sgd};
    use crate::schedule::ScheduleConfig;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    fn updater(kind: AlgorithmKind, dist: DistributionSpec, sched: ScheduleConfig) -> SparsityUpdater {
        SparsityUpdater::new(UpdaterConfig::new(kind, dist, sched)).unwrap()
    }

    fn small_tree() -> ParamTree {
        ParamTree::new()
            .with("a/kernel", t(&[2, 2], &[0.4, -0.1, 0.3, 2.0]))
            .with("b/kernel", t(&[2, 2], &[-1.5, 0.2, 0.05, 0.9]))
            .with("b/bias", t(&[2], &[0.01, -0.02]))
    }

    #[test]
    fn one_shot_magnitude_halves_each_layer() {
        let up = updater(
            AlgorithmKind::MagnitudePrune,
            DistributionSpec::uniform(0.5),
            ScheduleConfig::one_shot(0, 0.5),
        );
        let tx = up.wrap_optimizer(sgd(0.01).unwrap());
        let params = small_tree();
        let state = tx.init(&params).unwrap();
        assert!(state.masks.masks.values().all(|m| m.count_ones() == 4));
        let grads = params.map(|x| x.map(|_| 0.1));
        let (u, state) = tx.update(&grads, &state, &params).unwrap();
        let params = up
            .post_gradient_update(&apply_updates(&params, &u).unwrap(), &state)
            .unwrap();
        assert_eq!(params.get("a/kernel").unwrap().count_nonzero(), 2);
        assert_eq!(params.get("b/kernel").unwrap().count_nonzero(), 2);
        assert_eq!(params.get("b/bias").unwrap().count_nonzero(), 2);
        assert_eq!(state.step, 1);
        assert_eq!(state.inner.step, 1);
    }

    #[test]
    fn wrapped_updates_alone_stay_in_subspace() {
        // No post_gradient_update call: the emitted updates alone zero the
        // pruned coordinates.
        let up = updater(
            AlgorithmKind::MagnitudePrune,
            DistributionSpec::uniform(0.5),
            ScheduleConfig::one_shot(0, 0.5),
        );
        let tx = up.wrap_optimizer(adam(0.01).unwrap());
        let params = small_tree();
        let state = tx.init(&params).unwrap();
        let grads = params.map(|x| x.map(|_| 0.3));
        let (u, state) = tx.update(&grads, &state, &params).unwrap();
        let next = apply_updates(&params, &u).unwrap();
        assert_eq!(up.post_gradient_update(&next, &state).unwrap(), next);
    }

    #[test]
    fn packed_masks_behave_like_bytes() {
        let params = small_tree();
        let run = |packed: bool| {
            let up = SparsityUpdater::new(
                UpdaterConfig::new(
                    AlgorithmKind::MagnitudePrune,
                    DistributionSpec::uniform(0.5),
                    ScheduleConfig::polynomial(0, 4, 2, 0.0, 0.5),
                )
                .with_packed_masks(packed),
            )
            .unwrap();
            let tx = up.wrap_optimizer(sgd(0.1).unwrap());
            let mut state = tx.init(&params).unwrap();
            let mut p = params.clone();
            for i in 0..6 {
                let g = p.map(|x| x.map(|v| (v + i as f64).sin()));
                let (u, s) = tx.update(&g, &state, &p).unwrap();
                state = s;
                p = up
                    .post_gradient_update(&apply_updates(&p, &u).unwrap(), &state)
                    .unwrap();
            }
            (p, state)
        };
        let (pb, sb) = run(false);
        let (pp, sp) = run(true);
        assert_eq!(pb, pp);
        assert!(sp
            .masks
            .masks
            .values()
            .all(|m| m.encoding_kind() == EncodingKind::Packed));
        assert_eq!(sb.masks, sp.masks);
    }

    #[test]
    fn pre_forward_examples() {
        let params = ParamTree::new().with("w", t(&[1, 2], &[3.0, 5.0]));
        let ste = updater(
            AlgorithmKind::SteMagnitude,
            DistributionSpec::uniform(0.5),
            ScheduleConfig::no_update(0.5),
        );
        let tx = ste.wrap_optimizer(sgd(0.1).unwrap());
        let state = tx.init(&params).unwrap();
        let fwd = ste.pre_forward_update(&params, &state).unwrap();
        assert_eq!(fwd.get("w").unwrap().data(), &[0.0, 5.0]);
        assert_eq!(params.get("w").unwrap().data(), &[3.0, 5.0]);
        assert_eq!(ste.post_gradient_update(&params, &state).unwrap(), params);

        let mag = updater(
            AlgorithmKind::MagnitudePrune,
            DistributionSpec::uniform(0.5),
            ScheduleConfig::no_update(0.5),
        );
        let state = mag.wrap_optimizer(sgd(0.1).unwrap()).init(&params).unwrap();
        assert_eq!(mag.pre_forward_update(&params, &state).unwrap(), params);

        let dense_ste = updater(
            AlgorithmKind::SteMagnitude,
            DistributionSpec::uniform(0.0),
            ScheduleConfig::no_update(0.0),
        );
        let state = dense_ste.wrap_optimizer(sgd(0.1).unwrap()).init(&params).unwrap();
        assert_eq!(dense_ste.pre_forward_update(&params, &state).unwrap(), params);
    }

    #[test]
    fn post_gradient_examples() {
        let up = updater(
            AlgorithmKind::MagnitudePrune,
            DistributionSpec::uniform(0.0),
            ScheduleConfig::no_update(0.0),
        );
        let params = ParamTree::new().with("w", t(&[1, 3], &[1.0, 2.0, 3.0]));
        let mut state = up.wrap_optimizer(sgd(0.1).unwrap()).init(&params).unwrap();
        assert_eq!(up.post_gradient_update(&params, &state).unwrap(), params);
        state
            .masks
            .masks
            .insert("w".into(), Mask::from_bytes(vec![1, 3], vec![1, 0, 1]).unwrap());
        let once = up.post_gradient_update(&params, &state).unwrap();
        assert_eq!(once.get("w").unwrap().data(), &[1.0, 0.0, 3.0]);
        assert_eq!(up.post_gradient_update(&once, &state).unwrap(), once);
    }

    #[test]
    fn instant_sparsify_examples() {
        let up = updater(
            AlgorithmKind::MagnitudePrune,
            DistributionSpec::uniform(0.5),
            ScheduleConfig::one_shot(0, 0.5),
        );
        let x = Tensor::from_vec(vec![0.3, 1.2, 0.7, 0.05]);
        assert_eq!(up.instant_sparsify(&x).unwrap().data(), &[0.0, 1.2, 0.7, 0.0]);

        let zero = updater(
            AlgorithmKind::MagnitudePrune,
            DistributionSpec::uniform(0.0),
            ScheduleConfig::one_shot(0, 0.0),
        );
        assert_eq!(zero.instant_sparsify(&x).unwrap(), x);

        let tree = small_tree();
        let pruned = up.instant_sparsify(&tree).unwrap();
        assert_eq!(pruned.get("b/bias"), tree.get("b/bias"));
        assert_eq!(pruned.get("a/kernel").unwrap().count_nonzero(), 2);
    }

    #[test]
    fn instant_rejects_gradient_criteria() {
        for kind in [AlgorithmKind::SaliencyPrune, AlgorithmKind::RiglSparse] {
            let up = updater(
                kind,
                DistributionSpec::uniform(0.5),
                ScheduleConfig::periodic(0, 10, 1, 0.5),
            );
            assert!(matches!(up.instant_sparsify(&small_tree()), Err(Error::Unsupported(_))));
            assert!(matches!(
                up.instant_sparsify(&Tensor::from_vec(vec![1.0, 2.0])),
                Err(Error::Unsupported(_))
            ));
        }
    }

    #[test]
    fn n_by_m_target_mismatch_fails_at_init() {
        let params = ParamTree::new().with("w", Tensor::ones(&[4, 8]));
        let cfg = UpdaterConfig::new(
            AlgorithmKind::MagnitudePrune,
            DistributionSpec::uniform(0.8),
            ScheduleConfig::one_shot(0, 0.8),
        )
        .with_structure(StructureSpec::NByM { n: 2, m: 4 });
        let up = SparsityUpdater::new(cfg.clone()).unwrap();
        assert!(matches!(
            up.wrap_optimizer(sgd(0.1).unwrap()).init(&params),
            Err(Error::Config(_))
        ));

        let mut ok = cfg;
        ok.distribution.target_sparsity = 0.5;
        let up = SparsityUpdater::new(ok).unwrap();
        assert!(up.wrap_optimizer(sgd(0.1).unwrap()).init(&params).is_ok());
    }

    #[test]
    fn structure_shape_errors_at_init() {
        let params = ParamTree::new().with("w", Tensor::ones(&[3, 6]));
        let up = SparsityUpdater::new(
            UpdaterConfig::new(
                AlgorithmKind::MagnitudePrune,
                DistributionSpec::uniform(0.5),
                ScheduleConfig::one_shot(0, 0.5),
            )
            .with_structure(StructureSpec::Block { block_dims: [2, 4] }),
        )
        .unwrap();
        assert!(matches!(
            up.wrap_optimizer(sgd(0.1).unwrap()).init(&params),
            Err(Error::Structure { .. })
        ));
    }

    #[test]
    fn config_rejections() {
        let base = UpdaterConfig::new(
            AlgorithmKind::GlobalMagnitudePrune,
            DistributionSpec::uniform(0.5),
            ScheduleConfig::one_shot(0, 0.5),
        );
        assert!(SparsityUpdater::new(base.clone().with_structure(StructureSpec::NByM { n: 2, m: 4 })).is_err());
        let mut rigl = base.clone();
        rigl.algorithm = AlgorithmKind::RiglSparse;
        rigl.schedule = ScheduleConfig::periodic(0, 0, 1, 0.5);
        assert!(SparsityUpdater::new(rigl.clone()).is_err());
        rigl.schedule.end_step = 100;
        assert!(SparsityUpdater::new(rigl.clone()).is_ok());
        rigl.drop_fraction = 0.0;
        assert!(SparsityUpdater::new(rigl).is_err());
    }

    #[test]
    fn sparse_training_starts_at_target() {
        let params = ParamTree::new()
            .with("w", Tensor::ones(&[10, 10]))
            .with("b", Tensor::ones(&[10]));
        let up = updater(
            AlgorithmKind::StaticSparse,
            DistributionSpec::uniform(0.8),
            ScheduleConfig::no_update(0.8),
        );
        let state = up.wrap_optimizer(sgd(0.1).unwrap()).init(&params).unwrap();
        assert_eq!(state.masks.masks["w"].count_ones(), 20);
        assert_eq!(state.masks.dense["b"], vec![10]);
    }

    #[test]
    fn rigl_grown_weights_start_at_zero() {
        let params = ParamTree::new().with("w", t(&[1, 4], &[0.9, 0.1, 0.0, 0.0]));
        let mut cfg = UpdaterConfig::new(
            AlgorithmKind::RiglSparse,
            DistributionSpec::uniform(0.5),
            ScheduleConfig::periodic(0, 2, 1, 0.5),
        );
        cfg.drop_fraction = 0.9;
        let up = SparsityUpdater::new(cfg).unwrap();
        let tx = up.wrap_optimizer(sgd(0.1).unwrap());
        let mut state = tx.init(&params).unwrap();
        state
            .masks
            .masks
            .insert("w".into(), Mask::from_bytes(vec![1, 4], vec![1, 1, 0, 0]).unwrap());
        // d_0 = 0.9 -> round(0.9 * 2) = 2, clamped to the 2 inactive slots.
        let grads = ParamTree::new().with("w", t(&[1, 4], &[0.0, 0.0, 5.0, 1.0]));
        let (u, state) = tx.update(&grads, &state, &params).unwrap();
        let next = apply_updates(&params, &u).unwrap();
        assert_eq!(state.masks.masks["w"].to_bytes(), vec![0, 0, 1, 1]);
        assert_eq!(next.get("w").unwrap().data(), &[0.0, 0.0, 0.0, 0.0]);
    }
}
