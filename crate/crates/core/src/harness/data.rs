//! Synthetic classification datasets.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngKey;

fn default_classes() -> usize {
    3
}

fn default_features() -> usize {
    2
}

fn default_eval_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// `gaussian_blobs` or `two_spirals`.
    pub generator: String,
    pub n_samples: usize,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
    #[serde(default = "default_features")]
    pub n_features: usize,
    /// Standard deviation of the Gaussian noise added to each point.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    /// Share of samples held out for evaluation (taken from the end).
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
}

impl DatasetSpec {
    pub fn blobs(n_samples: usize, n_classes: usize, noise: f64, seed: u64) -> Self {
        Self {
            generator: "gaussian_blobs".into(),
            n_samples,
            n_classes,
            n_features: 2,
            noise,
            seed,
            eval_fraction: default_eval_fraction(),
        }
    }

    pub fn spirals(n_samples: usize, noise: f64, seed: u64) -> Self {
        Self {
            generator: "two_spirals".into(),
            n_classes: 2,
            ..Self::blobs(n_samples, 2, noise, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("dataset needs n_samples > 0".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.n_classes
            )));
        }
        if self.n_features == 0 {
            return Err(Error::Config("dataset needs n_features > 0".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise must be finite and >= 0, got {}",
                self.noise
            )));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(Error::Config(format!(
                "eval_fraction must be in [0, 1), got {}",
                self.eval_fraction
            )));
        }
        match self.generator.as_str() {
            "gaussian_blobs" => Ok(()),
            "two_spirals" if self.n_classes == 2 && self.n_features == 2 => Ok(()),
            "two_spirals" => Err(Error::Config("two_spirals has exactly 2 classes and 2 features".into())),
            other => Err(Error::Config(format!("unknown dataset generator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gathers the rows at `idx`.
    pub fn select(&self, idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
        (
            self.features.select(Axis(0), idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    /// Splits off the last `fraction` of rows (at least one row stays in
    /// each part when possible).
    pub fn split(&self, fraction: f64) -> (Dataset, Dataset) {
        let n = self.len();
        let n_eval = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
        let cut = n - n_eval;
        let part = |range: std::ops::Range<usize>| Dataset {
            features: self.features.slice(ndarray::s![range.clone(), ..]).to_owned(),
            labels: self.labels[range].to_vec(),
            n_classes: self.n_classes,
        };
        (part(0..cut), part(cut..n))
    }
}

/// Labels are assigned round-robin, so every class holds `n/k` samples
/// give or take one.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = RngKey::new(spec.seed).derive(&spec.generator).generator();
    let (n, k, d) = (spec.n_samples, spec.n_classes, spec.n_features);
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut features = Array2::<f64>::zeros((n, d));
    let noise = |rng: &mut rand_chacha::ChaCha8Rng| spec.noise * rng.sample::<f64, _>(StandardNormal);

    match spec.generator.as_str() {
        "gaussian_blobs" => {
            // Centres sit evenly on a circle of radius 3 in the first two
            // features; further features are pure noise.
            for (mut row, &y) in features.rows_mut().into_iter().zip(&labels) {
                let angle = 2.0 * PI * y as f64 / k as f64;
                for (j, x) in row.iter_mut().enumerate() {
                    let centre = match j {
                        0 => 3.0 * angle.cos(),
                        1 => 3.0 * angle.sin(),
                        _ => 0.0,
                    };
                    *x = centre + noise(&mut rng);
                }
            }
        }
        "two_spirals" => {
            for (mut row, &y) in features.rows_mut().into_iter().zip(&labels) {
                let t = 0.25 + rng.random::<f64>().sqrt() * 3.0 * PI;
                let phase = PI * y as f64;
                row[0] = t * (t + phase).cos() / PI + noise(&mut rng);
                row[1] = t * (t + phase).sin() / PI + noise(&mut rng);
            }
        }
        _ => unreachable!("validated"),
    }
    Ok(Dataset {
        features,
        labels,
        n_classes: k,
    })
}
