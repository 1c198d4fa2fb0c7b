//! AdamW with two parameter groups, linear warmup and value clipping.

use crate::encoder::{EncoderShape, ParamGroup, ParamSet};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rates and decay as seen by one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub lr_backbone: f64,
    pub lr_custom: f64,
    pub weight_decay: f64,
    pub freeze_backbone: bool,
    pub freeze_custom: bool,
}

impl OptimizerSettings {
    fn group(&self, group: ParamGroup) -> Option<f64> {
        match group {
            ParamGroup::Backbone if !self.freeze_backbone => Some(self.lr_backbone),
            ParamGroup::Custom if !self.freeze_custom => Some(self.lr_custom),
            _ => None,
        }
    }
}

/// First and second moments per tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: ParamSet,
    pub second: ParamSet,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(shape: &EncoderShape) -> Self {
        Self {
            first: ParamSet::zeros(shape),
            second: ParamSet::zeros(shape),
            step: 0,
        }
    }
}

/// One bias-corrected AdamW update of a single tensor with decoupled weight
/// decay. `step` is 1-based.
pub fn adamw_update(
    param: &mut [f64],
    grad: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    step: u64,
    lr: f64,
    weight_decay: f64,
) {
    let bc1 = 1.0 - BETA1.powf(step as f64);
    let bc2 = 1.0 - BETA2.powf(step as f64);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(first).zip(second) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p *= 1.0 - lr * weight_decay;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Apply one AdamW step to every unfrozen tensor, with each group's base
/// rate multiplied by `lr_scale`.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut OptimizerState,
    settings: &OptimizerSettings,
    lr_scale: f64,
) -> Result<()> {
    for (name, _, g) in grads.tensors() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name));
        }
    }
    state.step += 1;
    let step = state.step;
    let grads = grads.tensors();
    let firsts = state.first.tensors_mut();
    let seconds = state.second.tensors_mut();
    for ((((_, group, p), (_, _, g)), (_, _, m)), (_, _, v)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads)
        .zip(firsts)
        .zip(seconds)
    {
        if p.len() != g.len() {
            return Err(Error::Shape("gradient does not match parameters".into()));
        }
        if let Some(lr) = settings.group(group) {
            adamw_update(p, g, m, v, step, lr * lr_scale, settings.weight_decay);
        }
    }
    Ok(())
}

/// Linear warmup from 0 to 1 over `warmup_steps`, then constant.
pub fn lr_schedule(step: usize, warmup_steps: usize) -> f64 {
    if warmup_steps == 0 || step >= warmup_steps {
        1.0
    } else {
        step as f64 / warmup_steps as f64
    }
}

/// Element-wise clamp to `[-clip_value, clip_value]`.
pub fn clip_gradients(grads: &mut ParamSet, clip_value: f64) {
    for (_, _, t) in grads.tensors_mut() {
        for v in t.iter_mut() {
            *v = v.clamp(-clip_value, clip_value);
        }
    }
}
