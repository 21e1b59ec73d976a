//! The training loop.
//!
//! Each step samples a batch, projects the parameters for the forward pass,
//! computes loss and gradients, runs the wrapped optimizer and masks the
//! result. Evaluation records are emitted every `eval_every` steps and at
//! the last step as JSON lines.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OutputSpec};
use super::data::{generate_dataset, Dataset};
use super::mlp::{accuracy, MlpModel};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::engine::{SparsityState, SparsityUpdater};
use crate::error::{Error, Result};
use crate::mask::sparsity_summary;
use crate::optim::{apply_updates, GradientTransformation};
use crate::rng::RngKey;
use crate::tree::ParamTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    /// Mean training batch loss since the previous record.
    pub train_loss: f64,
    pub eval_accuracy: f64,
    pub per_layer_sparsity: BTreeMap<String, f64>,
    pub total_sparsity: f64,
}

impl EvalRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop (and checkpoint) once this many steps have completed.
    pub stop_at: Option<u64>,
    /// Continue from a checkpoint written by an earlier run of the same
    /// config. Metrics are appended.
    pub resume_from: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<EvalRecord>,
    pub params: ParamTree,
    pub state: SparsityState,
}

impl RunOutcome {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.eval_accuracy)
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
struct LossWindow {
    sum: f64,
    count: u64,
}

/// The config as stored in checkpoints: output paths are not part of the
/// experiment's identity.
fn identity_config(cfg: &ExperimentConfig) -> serde_json::Value {
    let cfg = ExperimentConfig {
        output: OutputSpec::default(),
        ..cfg.clone()
    };
    serde_json::to_value(cfg).expect("configs always serialize")
}

pub fn train(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    run(cfg, &RunOptions::default())
}

pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let data = generate_dataset(&cfg.dataset)?;
    let (train_set, eval_set) = data.split(cfg.dataset.eval_fraction);
    let eval_set = if eval_set.is_empty() {
        train_set.clone()
    } else {
        eval_set
    };
    let model = MlpModel::new(cfg.layer_dims.clone())?;
    let updater = SparsityUpdater::new(cfg.updater.clone())?;
    let tx = updater.wrap_optimizer(cfg.optimizer.build()?);
    let key = RngKey::new(cfg.seed);
    let stored_config = identity_config(cfg);

    let (mut params, mut state, mut window) = match &opts.resume_from {
        Some(dir) => {
            let ckpt = load_checkpoint(dir)?;
            if ckpt.config.as_ref() != Some(&stored_config) {
                return Err(Error::Config(format!(
                    "checkpoint in {} was written by a different config",
                    dir.display()
                )));
            }
            let params = ckpt
                .params
                .ok_or_else(|| Error::Checkpoint("checkpoint holds no parameters".into()))?;
            let window: LossWindow = serde_json::from_value(ckpt.metadata)
                .map_err(|e| Error::Checkpoint(format!("bad training metadata: {e}")))?;
            (params, ckpt.state, window)
        }
        None => {
            let params = model.init(key.derive("model"));
            let state = tx.init(&params)?;
            let params = updater.post_gradient_update(&params, &state)?;
            (params, state, LossWindow::default())
        }
    };

    let mut sink = match &cfg.output.metrics {
        Some(path) => {
            let file = if opts.resume_from.is_some() {
                OpenOptions::new().append(true).open(path)?
            } else {
                File::create(path)?
            };
            Some(BufWriter::new(file))
        }
        None => None,
    };

    let end = opts.stop_at.unwrap_or(cfg.total_steps).min(cfg.total_steps);
    let batch_key = key.derive("batch");
    let mut records = Vec::new();
    while state.step < end {
        let step = state.step;
        let mut rng = batch_key.fold_in(step).generator();
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.random_range(0..train_set.len()))
            .collect();
        let (x, y) = train_set.select(&idx);

        let forward = updater.pre_forward_update(&params, &state)?;
        let (loss, grads) = model.loss_and_grads(&forward, x.view(), &y)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { step, loss });
        }
        let (updates, next) = tx.update(&grads, &state, &params)?;
        state = next;
        params = updater.post_gradient_update(&apply_updates(&params, &updates)?, &state)?;
        window.sum += loss;
        window.count += 1;

        let done = state.step;
        if done % cfg.eval_every == 0 || done == cfg.total_steps {
            let record = evaluate(&model, &updater, &params, &state, &eval_set, window)?;
            if let Some(w) = sink.as_mut() {
                writeln!(w, "{}", record.to_json_line())?;
            }
            records.push(record);
            window = LossWindow::default();
        }
    }
    if let Some(w) = sink.as_mut() {
        w.flush()?;
    }

    if let Some(dir) = &cfg.output.checkpoint {
        let ckpt = Checkpoint {
            state: state.clone(),
            params: Some(params.clone()),
            config: Some(stored_config),
            metadata: serde_json::to_value(window)?,
        };
        save_checkpoint(dir, &ckpt)?;
    }
    Ok(RunOutcome { records, params, state })
}

fn evaluate(
    model: &MlpModel,
    updater: &SparsityUpdater,
    params: &ParamTree,
    state: &SparsityState,
    eval_set: &Dataset,
    window: LossWindow,
) -> Result<EvalRecord> {
    let forward = updater.pre_forward_update(params, state)?;
    let logits = model.forward(&forward, eval_set.view())?;
    let summary = sparsity_summary(&state.masks);
    Ok(EvalRecord {
        step: state.step,
        train_loss: if window.count == 0 {
            0.0
        } else {
            window.sum / window.count as f64
        },
        eval_accuracy: accuracy(&logits, &eval_set.labels),
        per_layer_sparsity: summary.layers.iter().map(|(k, c)| (k.clone(), c.sparsity)).collect(),
        total_sparsity: summary.total.sparsity,
    })
}
