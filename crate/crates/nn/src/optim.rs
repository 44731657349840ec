use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// First and second moments per parameter plus the shared step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Self { step: 0, m: zeros(), v: zeros() }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.m.iter().chain(&self.v).flatten().copied().collect()
    }

    pub fn from_flat(params: &ParamSet, step: u64, flat: &[f64]) -> Result<Self> {
        let n = params.num_scalars();
        if flat.len() != 2 * n {
            return Err(NnError::ShapeMismatch(format!(
                "optimizer state has {} values, expected {}",
                flat.len(),
                2 * n
            )));
        }
        let mut state = Self::new(params);
        state.step = step;
        let mut offset = 0;
        for buf in state.m.iter_mut().chain(state.v.iter_mut()) {
            let len = buf.len();
            buf.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(state)
    }
}

/// One bias-corrected Adam update from the accumulated `grad` buffers.
/// Weight decay, when nonzero, is added to the gradient (L2 form).
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, lr: f64, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let data = p.value.data_mut();
        for i in 0..data.len() {
            let g = p.grad[i] + cfg.weight_decay * data[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrKind {
    Cosine,
    Step,
    Constant,
}

impl fmt::Display for LrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrKind::Cosine => "cosine",
            LrKind::Step => "step",
            LrKind::Constant => "constant",
        })
    }
}

impl FromStr for LrKind {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "step" => Ok(Self::Step),
            "constant" => Ok(Self::Constant),
            other => Err(NnError::InvalidConfig(format!("unknown lr schedule {other:?}"))),
        }
    }
}

/// Learning rate for 0-based `step` of `total_steps`. Linear warmup from 0
/// reaches `base_lr` at `step = warmup_steps`; afterwards `t` runs from 0 to
/// 1 over the remaining steps and
/// - cosine: `base·½(1 + cos πt)`, reaching 0 at the final step;
/// - step: `base`, then `0.1·base` from `t = ½`, `0.01·base` from `t = ¾`;
/// - constant: `base`.
pub fn lr_schedule(step: usize, total_steps: usize, base_lr: f64, warmup_steps: usize, kind: LrKind) -> f64 {
    if step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(1).saturating_sub(warmup_steps);
    let t = if span == 0 {
        0.0
    } else {
        ((step - warmup_steps) as f64 / span as f64).min(1.0)
    };
    match kind {
        LrKind::Cosine => base_lr * 0.5 * (1.0 + (PI * t).cos()),
        LrKind::Step if t >= 0.75 => base_lr * 0.01,
        LrKind::Step if t >= 0.5 => base_lr * 0.1,
        LrKind::Step | LrKind::Constant => base_lr,
    }
}
