use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{parse, parse_opt, show_opt};

/// When the learning rate shrinks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleMode {
    /// Every epoch whose validation loss is strictly above the previous one.
    #[default]
    OnIncrease,
    /// Every epoch from the first increase onwards.
    EveryEpochAfterFirstIncrease,
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::OnIncrease => "on_increase",
            ScheduleMode::EveryEpochAfterFirstIncrease => "every_epoch_after_first_increase",
        })
    }
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on_increase" => Ok(ScheduleMode::OnIncrease),
            "every_epoch_after_first_increase" => Ok(ScheduleMode::EveryEpochAfterFirstIncrease),
            _ => Err(Error::config("schedule_mode", format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Nesterov momentum μ.
    pub momentum: f64,
    pub batch_size: usize,
    pub lr_shrink: f64,
    pub min_lr: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
    pub schedule_mode: ScheduleMode,
    /// Record elapsed seconds in the training curve; when off the column is 0
    /// and reruns produce identical curves.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.25,
            momentum: 0.99,
            batch_size: 32,
            lr_shrink: 10.0,
            min_lr: 1e-4,
            max_epochs: 100,
            seed: 1,
            clip_norm: None,
            schedule_mode: ScheduleMode::OnIncrease,
            wall_clock: false,
        }
    }
}

pub(crate) const TRAIN_KEYS: &[&str] = &[
    "lr0",
    "momentum",
    "batch_size",
    "lr_shrink",
    "min_lr",
    "max_epochs",
    "seed",
    "clip_norm",
    "schedule_mode",
    "wall_clock",
];

impl TrainConfig {
    /// Sets one field from its textual form. Returns `Ok(false)` for keys
    /// that do not belong to the training config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lr0" => self.lr0 = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr_shrink" => self.lr_shrink = parse(key, value)?,
            "min_lr" => self.min_lr = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse_opt(key, value)?,
            "schedule_mode" => self.schedule_mode = value.parse()?,
            "wall_clock" => self.wall_clock = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr0", self.lr0.to_string()),
            ("momentum", self.momentum.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr_shrink", self.lr_shrink.to_string()),
            ("min_lr", self.min_lr.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("clip_norm", show_opt(&self.clip_norm)),
            ("schedule_mode", self.schedule_mode.to_string()),
            ("wall_clock", self.wall_clock.to_string()),
        ]
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr > 0.0) {
            return Err(Error::config("min_lr", "must be positive"));
        }
        if !(self.lr0 > self.min_lr) {
            return Err(Error::config("lr0", "must exceed min_lr"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must be in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.lr_shrink > 1.0) {
            return Err(Error::config("lr_shrink", "must exceed 1"));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::config("clip_norm", "must be positive"));
        }
        Ok(())
    }
}
