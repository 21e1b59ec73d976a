//! Algorithm × sparsity × seed grids.

use std::io::Write;
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OutputSpec};
use super::train::train;
use crate::algorithms::AlgorithmKind;
use crate::engine::UpdaterConfig;
use crate::error::{Error, Result};
use crate::schedule::ScheduleConfig;

/// Name of the unpruned baseline row.
pub const DENSE: &str = "dense";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareMatrix {
    pub base: ExperimentConfig,
    /// Algorithm names as accepted by [`AlgorithmKind`], plus `dense`.
    pub algorithms: Vec<String>,
    pub sparsities: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Schedule for gradual pruning and straight-through runs; defaults to
    /// the base config's schedule.
    #[serde(default)]
    pub pruning_schedule: Option<ScheduleConfig>,
    /// Schedule for static, SET and RigL runs; defaults to the base
    /// config's schedule.
    #[serde(default)]
    pub sparse_schedule: Option<ScheduleConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub algorithm: String,
    pub sparsity: f64,
    /// Final eval accuracy per seed, in seed order.
    pub accuracies: Vec<f64>,
}

impl CellResult {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }

    /// Sample standard deviation; zero for a single seed.
    pub fn std(&self) -> f64 {
        let n = self.accuracies.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.accuracies.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

impl CompareMatrix {
    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() || self.sparsities.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "algorithms, sparsities and seeds must be non-empty".into(),
            ));
        }
        for s in &self.sparsities {
            if !(0.0..1.0).contains(s) {
                return Err(Error::Config(format!("sparsity must be in [0, 1), got {s}")));
            }
        }
        for name in &self.algorithms {
            if name != DENSE {
                name.parse::<AlgorithmKind>()?;
            }
        }
        Ok(())
    }

    /// The config of one grid cell.
    pub fn cell_config(&self, algorithm: &str, sparsity: f64, seed: u64) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig {
            output: OutputSpec::default(),
            ..self.base.clone()
        };
        if algorithm == DENSE {
            cfg.updater = UpdaterConfig::dense();
        } else {
            let kind: AlgorithmKind = algorithm.parse()?;
            let schedule = if kind.is_sparse_training() {
                self.sparse_schedule.clone()
            } else {
                self.pruning_schedule.clone()
            };
            cfg.updater.algorithm = kind;
            cfg.updater.distribution.target_sparsity = sparsity;
            cfg.updater.schedule = schedule.unwrap_or(cfg.updater.schedule).retarget(sparsity);
        }
        cfg.set_seed(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Runs every cell. The dense row ignores sparsity and is trained once
    /// per seed.
    pub fn run(&self) -> Result<Vec<CellResult>> {
        self.validate()?;
        let mut jobs = Vec::new();
        for algorithm in &self.algorithms {
            let sparsities: &[f64] = if algorithm == DENSE {
                &self.sparsities[..1]
            } else {
                &self.sparsities
            };
            for &sparsity in sparsities {
                for &seed in &self.seeds {
                    jobs.push((algorithm.clone(), sparsity, seed));
                }
            }
        }
        let run_one = |(algorithm, sparsity, seed): &(String, f64, u64)| -> Result<f64> {
            let cfg = self.cell_config(algorithm, *sparsity, *seed)?;
            log::debug!("running {algorithm} at sparsity {sparsity} with seed {seed}");
            let out = train(&cfg)?;
            Ok(out.final_accuracy().unwrap_or(0.0))
        };
        #[cfg(feature = "parallel")]
        let accs: Vec<f64> = jobs.par_iter().map(run_one).collect::<Result<_>>()?;
        #[cfg(not(feature = "parallel"))]
        let accs: Vec<f64> = jobs.iter().map(run_one).collect::<Result<_>>()?;

        let n_seeds = self.seeds.len();
        let mut cells: Vec<CellResult> = Vec::new();
        for (chunk, job) in accs.chunks(n_seeds).zip(jobs.chunks(n_seeds)) {
            let (algorithm, sparsity, _) = &job[0];
            if algorithm == DENSE {
                for &s in &self.sparsities {
                    cells.push(CellResult {
                        algorithm: algorithm.clone(),
                        sparsity: s,
                        accuracies: chunk.to_vec(),
                    });
                }
            } else {
                cells.push(CellResult {
                    algorithm: algorithm.clone(),
                    sparsity: *sparsity,
                    accuracies: chunk.to_vec(),
                });
            }
        }
        Ok(cells)
    }
}

/// One row per algorithm; a `mean` and `std` column per sparsity.
pub fn write_csv<W: Write>(matrix: &CompareMatrix, cells: &[CellResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["algorithm".to_string()];
    for s in &matrix.sparsities {
        header.push(format!("{s}_mean"));
        header.push(format!("{s}_std"));
    }
    w.write_record(&header)?;
    for algorithm in &matrix.algorithms {
        let mut row = vec![algorithm.clone()];
        for &s in &matrix.sparsities {
            let cell = cells
                .iter()
                .find(|c| &c.algorithm == algorithm && c.sparsity == s)
                .ok_or_else(|| Error::Argument(format!("no result for {algorithm} at {s}")))?;
            row.push(format!("{:.6}", cell.mean()));
            row.push(format!("{:.6}", cell.std()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(matrix: &CompareMatrix, cells: &[CellResult], path: impl AsRef<Path>) -> Result<()> {
    write_csv(matrix, cells, std::fs::File::create(path)?)
}
