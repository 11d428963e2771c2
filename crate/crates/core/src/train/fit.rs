use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::curve::{CurveRecord, TrainingCurve};
use super::loss::{batch_gradients, corpus_loss};
use super::optim::{clip_grad_norm, lr_schedule_step, nag_step, OptimizerState, ScheduleDecision};
use crate::data::{batch_encoded, Batch, EncodedPair};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitOutcome {
    /// The learning rate fell below `min_lr`.
    Stopped,
    /// `max_epochs` was reached first.
    EpochLimit,
}

/// Batches in corpus order, for evaluation.
pub fn sequential_batches(pairs: &[EncodedPair], batch_size: usize) -> Vec<Batch> {
    pairs
        .chunks(batch_size.max(1))
        .map(|c| Batch::from_pairs(&c.iter().collect::<Vec<_>>()))
        .collect()
}

/// Trains from scratch and returns the curve.
pub fn fit(
    params: &mut Parameters,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[EncodedPair],
    dev: &[EncodedPair],
) -> Result<TrainingCurve> {
    let mut state = OptimizerState::new(params, train_cfg);
    let mut curve = TrainingCurve::new();
    fit_with(
        params,
        model_cfg,
        train_cfg,
        train,
        dev,
        &mut state,
        &mut curve,
        |_, _, _| Ok(()),
    )?;
    Ok(curve)
}

/// Runs epochs after the last one recorded in `curve`, so that a saved
/// `(params, state, curve)` triple resumes where it left off. `on_epoch`
/// runs after every epoch.
#[allow(clippy::too_many_arguments)]
pub fn fit_with<F>(
    params: &mut Parameters,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[EncodedPair],
    dev: &[EncodedPair],
    state: &mut OptimizerState,
    curve: &mut TrainingCurve,
    mut on_epoch: F,
) -> Result<FitOutcome>
where
    F: FnMut(&Parameters, &OptimizerState, &TrainingCurve) -> Result<()>,
{
    model_cfg.validate()?;
    train_cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Data("training and validation corpora must be non-empty".into()));
    }
    if state.stopped {
        return Ok(FitOutcome::Stopped);
    }
    let dev_batches = sequential_batches(dev, train_cfg.batch_size);
    let start = Instant::now();
    let prior_seconds = curve.last().map_or(0.0, |r| r.wall_seconds);
    let first = curve.last().map_or(1, |r| r.epoch + 1);
    for epoch in first..=train_cfg.max_epochs {
        let context = |batch: usize| {
            move |e: Error| Error::Training {
                epoch,
                batch,
                source: Box::new(e),
            }
        };
        let batches = batch_encoded(train, train_cfg.batch_size, train_cfg.seed, epoch as u64);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
        dropout_rng.set_stream(epoch as u64);
        let lr = state.current_lr;
        let mut nll = 0.0;
        let mut tokens = 0;
        for (i, batch) in batches.iter().enumerate() {
            let dropout_seed = (model_cfg.dropout > 0.0).then(|| dropout_rng.random::<u64>());
            let (loss, mut grads) = batch_gradients(params, model_cfg, batch, dropout_seed).map_err(context(i + 1))?;
            if !loss.is_finite() {
                return Err(context(i + 1)(Error::Data(format!("non-finite training loss {loss}"))));
            }
            if let Some(c) = train_cfg.clip_norm {
                clip_grad_norm(&mut grads, c);
            }
            nag_step(params, &grads, state).map_err(context(i + 1))?;
            let n = batch.target_tokens();
            nll += loss * n as f64;
            tokens += n;
        }
        let val_loss = corpus_loss(params, model_cfg, &dev_batches).map_err(context(0))?;
        let decision = lr_schedule_step(state, train_cfg, val_loss);
        let wall_seconds = if train_cfg.wall_clock {
            prior_seconds + start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        curve.push(CurveRecord {
            epoch,
            train_loss: nll / tokens as f64,
            val_loss,
            lr,
            wall_seconds,
        })?;
        on_epoch(params, state, curve)?;
        if decision == ScheduleDecision::Stop {
            return Ok(FitOutcome::Stopped);
        }
    }
    Ok(FitOutcome::EpochLimit)
}
