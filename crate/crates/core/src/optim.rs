//! AdamW with decoupled weight decay and the tri-stage learning-rate schedule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("shape mismatch: {params} params, {grads} grads, {state} state")]
    ShapeMismatch { params: usize, grads: usize, state: usize },
}

/// Warm-up / hold / decay fractions of the total step budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriStage {
    pub peak_lr: f64,
    pub max_steps: u64,
    pub warmup_frac: f64,
    pub constant_frac: f64,
    pub decay_frac: f64,
}

impl TriStage {
    pub fn new(peak_lr: f64, max_steps: u64) -> Self {
        TriStage {
            peak_lr,
            max_steps,
            warmup_frac: 0.10,
            constant_frac: 0.40,
            decay_frac: 0.50,
        }
    }

    /// Integer knots: end of warm-up and end of the constant stage.
    pub fn knots(&self) -> (u64, u64) {
        let s = self.max_steps as f64;
        let warm = (self.warmup_frac * s).round() as u64;
        let hold = ((self.warmup_frac + self.constant_frac) * s).round() as u64;
        (warm.min(self.max_steps), hold.clamp(warm, self.max_steps))
    }

    /// Linear 0 to peak over warm-up, constant, then linear to 0 at `max_steps`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let step = step.min(self.max_steps);
        let (warm, hold) = self.knots();
        if step <= warm {
            if warm == 0 {
                return self.peak_lr;
            }
            self.peak_lr * step as f64 / warm as f64
        } else if step <= hold {
            self.peak_lr
        } else {
            let decay = self.max_steps - hold;
            self.peak_lr * (self.max_steps - step) as f64 / decay as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamWState {
    pub fn new(n: usize) -> Self {
        AdamWState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One AdamW update. Parameters first shrink by `1 - lr * wd`, then take the
/// bias-corrected Adam step.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamWState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<(), OptimError> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.m.len() != state.v.len() {
        return Err(OptimError::ShapeMismatch {
            params: params.len(),
            grads: grads.len(),
            state: state.m.len(),
        });
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let shrink = 1.0 - lr * cfg.weight_decay;
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] = params[i] * shrink - lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}
