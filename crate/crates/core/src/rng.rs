//! Splittable, counter-based randomness.
//!
//! An [`RngKey`] never mutates. Child keys are derived from a parent and a
//! label (a parameter path, a purpose, a step number), and a key expands into
//! a ChaCha8 stream selected by `(seed, stream)`. Two keys with the same
//! derivation history always produce the same bits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngKey {
    pub seed: u64,
    pub stream: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngKey {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Child key for `label`. Pure: the same parent and label always give the
    /// same child.
    pub fn derive(&self, label: &str) -> Self {
        Self {
            seed: self.seed,
            stream: mix(self.stream ^ mix(fnv1a(label.as_bytes()))),
        }
    }

    /// Child key for an integer label such as a step counter.
    pub fn fold_in(&self, value: u64) -> Self {
        Self {
            seed: self.seed,
            stream: mix(self.stream.rotate_left(17) ^ mix(value ^ 0x5851_f42d_4c95_7f2d)),
        }
    }

    /// A fresh generator positioned at the start of this key's stream.
    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// `n` samples from U[0, 1).
    pub fn uniforms(&self, n: usize) -> Vec<f64> {
        let mut rng = self.generator();
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    /// `n` standard normal samples.
    pub fn normals(&self, n: usize) -> Vec<f64> {
        let mut rng = self.generator();
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }
}

/// Free-function form of [`RngKey::derive`].
pub fn derive_key(key: RngKey, label: &str) -> RngKey {
    key.derive(label)
}
