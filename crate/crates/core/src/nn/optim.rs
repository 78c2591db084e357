use std::f64::consts::PI;

use super::{NnError, ParamSet};

/// Linear warmup from 0 to `base`, then half-cosine decay to 0 at
/// `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    /// A schedule that stays at `base` for any realistic step count.
    pub fn constant(base: f64) -> Self {
        Self {
            base,
            warmup_steps: 0,
            total_steps: usize::MAX,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return if step >= self.total_steps { 0.0 } else { self.base };
        }
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        (self.base * 0.5 * (1.0 + (PI * progress).cos())).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// One momentum buffer entry per parameter.
    pub buffers: Vec<f64>,
}

impl OptimState {
    pub fn new(schedule: LrSchedule, momentum: f64, weight_decay: f64, n_params: usize) -> Self {
        Self {
            schedule,
            momentum,
            weight_decay,
            buffers: vec![0.0; n_params],
        }
    }
}

/// One SGD-with-momentum update at schedule position `step`; zeroes the
/// gradients afterwards and returns the learning rate used.
///
/// `v <- momentum * v + (g + weight_decay * p)`, `p <- p - lr * v`.
/// Non-trainable slots are left untouched.
pub fn sgd_step(params: &mut ParamSet, state: &mut OptimState, step: usize) -> Result<f64, NnError> {
    if let Some(slot) = params
        .slots
        .iter()
        .find(|s| params.grads[s.range.clone()].iter().any(|g| !g.is_finite()))
    {
        return Err(NnError::NonFinite {
            layer: slot.name.clone(),
        });
    }
    if state.buffers.len() != params.len() {
        return Err(NnError::GradShape(format!(
            "optimizer holds {} buffers for {} parameters",
            state.buffers.len(),
            params.len()
        )));
    }
    let lr = state.schedule.lr_at(step);
    for slot in params.slots.iter().filter(|s| s.trainable) {
        for i in slot.range.clone() {
            let g = params.grads[i] + state.weight_decay * params.values[i];
            let v = state.momentum * state.buffers[i] + g;
            state.buffers[i] = v;
            params.values[i] -= lr * v;
        }
    }
    params.zero_grads();
    Ok(lr)
}
