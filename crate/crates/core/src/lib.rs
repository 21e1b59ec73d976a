//! Pruning and sparse training on top of composable gradient transformations.
//!
//! The pieces, bottom up:
//!
//! - [`tensor`], [`tree`], [`rng`], [`select`]: dense `f64` tensors, named
//!   parameter trees, splittable randomness and top-k selection.
//! - [`optim`]: SGD, Adam, scaling and chaining as pure `(init, update)`
//!   transformations.
//! - [`schedule`] and [`distribution`]: when masks change and how sparse each
//!   layer should be.
//! - [`structure`] and [`mask`]: unstructured, N:M and block top-k, byte and
//!   bit-packed masks.
//! - [`algorithms`] and [`engine`]: gradual pruning (random, magnitude,
//!   saliency, global magnitude), straight-through estimation, and
//!   static/SET/RigL sparse training behind one optimizer wrapper.
//! - [`checkpoint`]: directory checkpoints of the full training state.
//! - [`harness`]: a small MLP, synthetic datasets, and the training and
//!   comparison loops used by the CLI.

pub mod algorithms;
pub mod checkpoint;
pub mod distribution;
pub mod engine;
pub mod error;
pub mod harness;
pub mod mask;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod select;
pub mod structure;
pub mod tensor;
pub mod tree;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::algorithms::{AlgorithmKind, DropGrowConfig};
    pub use crate::distribution::{DistributionKind, DistributionSpec, FilterSpec};
    pub use crate::engine::{Sparsified, SparsityState, SparsityUpdater, UpdaterConfig};
    pub use crate::mask::{sparsity_summary, Mask, MaskTree};
    pub use crate::optim::{adam, apply_updates, chain, identity, scale, sgd, GradientTransformation, OptState};
    pub use crate::rng::RngKey;
    pub use crate::schedule::{ScheduleConfig, ScheduleKind};
    pub use crate::structure::StructureSpec;
    pub use crate::tensor::Tensor;
    pub use crate::tree::ParamTree;
    pub use crate::{Error, Result};
}
