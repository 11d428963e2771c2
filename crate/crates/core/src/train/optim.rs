use super::config::{ScheduleMode, TrainConfig};
use crate::error::{Error, Result};
use crate::model::Parameters;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Same names and shapes as the parameters.
    pub velocity: Parameters,
    pub current_lr: f64,
    pub momentum: f64,
    pub prev_val_loss: Option<f64>,
    /// Set once the first validation increase has been seen.
    pub shrink_started: bool,
    /// Set once the learning rate has fallen below the minimum.
    pub stopped: bool,
}

impl OptimizerState {
    pub fn new(params: &Parameters, cfg: &TrainConfig) -> Self {
        OptimizerState {
            velocity: params.zeros_like(),
            current_lr: cfg.lr0,
            momentum: cfg.momentum,
            prev_val_loss: None,
            shrink_started: false,
            stopped: false,
        }
    }
}

fn check_layout(params: &Parameters, other: &Parameters, what: &'static str) -> Result<()> {
    if params.len() != other.len() {
        return Err(Error::shape(what, &[params.len()], &[other.len()]));
    }
    for ((n1, t1), (n2, t2)) in params.iter().zip(other.iter()) {
        if n1 != n2 || t1.shape != t2.shape {
            return Err(Error::shape(what, &t1.shape, &t2.shape));
        }
    }
    Ok(())
}

/// One Nesterov step: `v ← μv + g; θ ← θ − lr·(g + μv)`.
pub fn nag_step(params: &mut Parameters, grads: &Parameters, state: &mut OptimizerState) -> Result<()> {
    check_layout(params, grads, "nag_step")?;
    check_layout(params, &state.velocity, "nag_step")?;
    let (lr, mu) = (state.current_lr, state.momentum);
    for i in 0..params.len() {
        let g = &grads.by_index(i).1.values;
        let v = &mut state.velocity.by_index_mut(i).1.values;
        let theta = &mut params.by_index_mut(i).1.values;
        for ((t, v), &g) in theta.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = mu * *v + g;
            *t -= lr * (g + mu * *v);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so that their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut Parameters, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|(_, t)| t.values.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, t) in grads.iter_mut() {
            t.values.iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleDecision {
    Continue,
    Stop,
}

/// Applies the validation-driven learning-rate rule after an epoch.
pub fn lr_schedule_step(state: &mut OptimizerState, cfg: &TrainConfig, new_val_loss: f64) -> ScheduleDecision {
    let increased = state.prev_val_loss.is_some_and(|prev| new_val_loss > prev);
    let shrink = match cfg.schedule_mode {
        ScheduleMode::OnIncrease => increased,
        ScheduleMode::EveryEpochAfterFirstIncrease => state.shrink_started || increased,
    };
    if increased {
        state.shrink_started = true;
    }
    if shrink {
        state.current_lr /= cfg.lr_shrink;
    }
    state.prev_val_loss = Some(new_val_loss);
    if state.current_lr < cfg.min_lr {
        state.stopped = true;
        ScheduleDecision::Stop
    } else {
        ScheduleDecision::Continue
    }
}
