use std::path::PathBuf;

use qst_nn::model::{default_config, FcnConfig, ModelConfig, ModelKind};
use qst_nn::optim::LrKind;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

pub const DEFAULT_BATCH: usize = 256;
pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_WARMUP_EPOCHS: usize = 20;
pub const DEFAULT_EVAL_EVERY: usize = 5;
pub const QAT_LR: f64 = 0.005;
pub const FCN_LR: f64 = 1e-4;

/// Architecture overrides applied on top of the default transformer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchOverrides {
    #[serde(rename = "d_L", skip_serializing_if = "Option::is_none")]
    pub d_l: Option<usize>,
    #[serde(rename = "d_S", skip_serializing_if = "Option::is_none")]
    pub d_s: Option<usize>,
    #[serde(rename = "d_H", skip_serializing_if = "Option::is_none")]
    pub d_h: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_rate: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Dataset directory; unused when a dataset is passed in memory.
    pub data: PathBuf,
    pub model: ModelKind,
    pub beta: f64,
    pub batch_size: usize,
    /// `None` picks the per-model default.
    pub lr: Option<f64>,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr_kind: LrKind,
    pub weight_decay: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Trailing samples held out for evaluation; `None` holds out `n / 11`.
    pub test_samples: Option<usize>,
    pub arch: ArchOverrides,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::new(),
            model: ModelKind::Qat,
            beta: qst_nn::loss::DEFAULT_BETA,
            batch_size: DEFAULT_BATCH,
            lr: None,
            epochs: DEFAULT_EPOCHS,
            warmup_epochs: DEFAULT_WARMUP_EPOCHS,
            lr_kind: LrKind::Cosine,
            weight_decay: 0.0,
            seed: 0,
            eval_every: DEFAULT_EVAL_EVERY,
            test_samples: None,
            arch: ArchOverrides::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.warmup_epochs > self.epochs {
            return bad(format!("warmup_epochs {} exceeds epochs {}", self.warmup_epochs, self.epochs));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta {} is outside [0, 1]", self.beta));
        }
        if let Some(lr) = self.lr {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("learning rate {lr} must be positive"));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay {} must be nonnegative", self.weight_decay));
        }
        Ok(())
    }

    pub fn base_lr(&self) -> f64 {
        self.lr.unwrap_or(match self.model {
            ModelKind::Fcn => FCN_LR,
            _ => QAT_LR,
        })
    }

    /// Held-out count for a dataset of `n` samples.
    pub fn holdout(&self, n: usize) -> usize {
        self.test_samples.unwrap_or(n / 11).min(n.saturating_sub(1))
    }

    pub fn model_config(&self, n_qubits: usize, d_g: usize) -> Result<ModelConfig> {
        let mut cfg = default_config(self.model, n_qubits, d_g, self.seed);
        match &mut cfg {
            ModelConfig::Qat(c) => {
                let a = &self.arch;
                c.d_l = a.d_l.unwrap_or(c.d_l);
                c.d_s = a.d_s.unwrap_or(c.d_s);
                c.d_h = a.d_h.unwrap_or(c.d_h);
                c.d_rate = a.d_rate.unwrap_or(c.d_rate);
                c.validate()?;
            }
            ModelConfig::Fcn(FcnConfig { .. }) => {
                if self.arch != ArchOverrides::default() {
                    return Err(TrainError::InvalidConfig(
                        "architecture overrides apply to the transformer only".into(),
                    ));
                }
            }
        }
        Ok(cfg)
    }
}
