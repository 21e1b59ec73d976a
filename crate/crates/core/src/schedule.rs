//! When masks update, and how sparse they should be at a given step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Masks are never recomputed after initialization.
    NoUpdate,
    /// A single update at `begin_step`.
    OneShot,
    /// Updates every `frequency` steps in `[begin_step, end_step]` at a fixed
    /// sparsity.
    Periodic,
    /// Periodic updates with sparsity ramped along a polynomial.
    Polynomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    #[serde(default)]
    pub begin_step: u64,
    #[serde(default)]
    pub end_step: u64,
    #[serde(default = "default_frequency")]
    pub frequency: u64,
    #[serde(default)]
    pub initial_sparsity: f64,
    #[serde(default)]
    pub final_sparsity: f64,
    #[serde(default = "default_power")]
    pub power: f64,
}

fn default_frequency() -> u64 {
    1
}

fn default_power() -> f64 {
    3.0
}

impl ScheduleConfig {
    pub fn no_update(sparsity: f64) -> Self {
        Self {
            kind: ScheduleKind::NoUpdate,
            begin_step: 0,
            end_step: 0,
            frequency: 1,
            initial_sparsity: 0.0,
            final_sparsity: sparsity,
            power: default_power(),
        }
    }

    pub fn one_shot(step: u64, sparsity: f64) -> Self {
        Self {
            kind: ScheduleKind::OneShot,
            begin_step: step,
            end_step: step,
            ..Self::no_update(sparsity)
        }
    }

    pub fn periodic(begin_step: u64, end_step: u64, frequency: u64, sparsity: f64) -> Self {
        Self {
            kind: ScheduleKind::Periodic,
            begin_step,
            end_step,
            frequency,
            ..Self::no_update(sparsity)
        }
    }

    /// Cubic ramp from `initial` to `final_` over `[begin_step, end_step]`.
    pub fn polynomial(begin_step: u64, end_step: u64, frequency: u64, initial: f64, final_: f64) -> Self {
        Self {
            kind: ScheduleKind::Polynomial,
            begin_step,
            end_step,
            frequency,
            initial_sparsity: initial,
            final_sparsity: final_,
            power: default_power(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("initial_sparsity", self.initial_sparsity),
            ("final_sparsity", self.final_sparsity),
        ] {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::Config(format!("schedule {name} must be in [0, 1), got {s}")));
            }
        }
        if self.end_step < self.begin_step {
            return Err(Error::Config(format!(
                "schedule end_step {} precedes begin_step {}",
                self.end_step, self.begin_step
            )));
        }
        if self.frequency == 0 {
            return Err(Error::Config("schedule frequency must be positive".into()));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::Config(format!(
                "schedule power must be positive, got {}",
                self.power
            )));
        }
        if self.kind == ScheduleKind::Polynomial && self.final_sparsity < self.initial_sparsity {
            return Err(Error::Config(format!(
                "polynomial schedule must not decrease: {} -> {}",
                self.initial_sparsity, self.final_sparsity
            )));
        }
        Ok(())
    }

    /// The same timing, ramping towards `target` instead of
    /// `final_sparsity`. The engine uses this to give each layer its own
    /// endpoint from the sparsity distribution.
    pub fn retarget(&self, target: f64) -> Self {
        Self {
            final_sparsity: target,
            initial_sparsity: self.initial_sparsity.min(target),
            ..self.clone()
        }
    }

    pub fn should_update(&self, step: u64) -> bool {
        should_update(self, step)
    }

    pub fn current_sparsity(&self, step: u64) -> f64 {
        current_sparsity(self, step)
    }
}

pub fn should_update(cfg: &ScheduleConfig, step: u64) -> bool {
    match cfg.kind {
        ScheduleKind::NoUpdate => false,
        ScheduleKind::OneShot => step == cfg.begin_step,
        ScheduleKind::Periodic | ScheduleKind::Polynomial => {
            (cfg.begin_step..=cfg.end_step).contains(&step) && (step - cfg.begin_step).is_multiple_of(cfg.frequency)
        }
    }
}

pub fn current_sparsity(cfg: &ScheduleConfig, step: u64) -> f64 {
    match cfg.kind {
        ScheduleKind::NoUpdate | ScheduleKind::Periodic => cfg.final_sparsity,
        ScheduleKind::OneShot => {
            if step >= cfg.begin_step {
                cfg.final_sparsity
            } else {
                0.0
            }
        }
        ScheduleKind::Polynomial => {
            let progress = if cfg.end_step == cfg.begin_step {
                if step >= cfg.begin_step {
                    1.0
                } else {
                    0.0
                }
            } else {
                let r = (step as f64 - cfg.begin_step as f64) / (cfg.end_step as f64 - cfg.begin_step as f64);
                r.clamp(0.0, 1.0)
            };
            if progress <= 0.0 {
                return cfg.initial_sparsity;
            }
            if progress >= 1.0 {
                return cfg.final_sparsity;
            }
            cfg.final_sparsity + (cfg.initial_sparsity - cfg.final_sparsity) * (1.0 - progress).powf(cfg.power)
        }
    }
}
