//! Reconstructors mapping a frequency table (and, for the transformer, the
//! measurement operators) to an unnormalized α-vector.

mod fcn;
mod qat;

use std::fmt;
use std::str::FromStr;

use qst_core::MeasurementSet;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NnError, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub use fcn::{FcnConfig, FcnModel, FCN_HIDDEN, FCN_LAYERS};
pub use qat::{multi_head_attention, position_encoding, QatConfig, QatModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "qat")]
    Qat,
    #[serde(rename = "qat-no-oe")]
    QatNoOe,
    #[serde(rename = "fcn")]
    Fcn,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Qat => "qat",
            ModelKind::QatNoOe => "qat-no-oe",
            ModelKind::Fcn => "fcn",
        })
    }
}

impl FromStr for ModelKind {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "qat" => Ok(Self::Qat),
            "qat-no-oe" => Ok(Self::QatNoOe),
            "fcn" => Ok(Self::Fcn),
            other => Err(NnError::InvalidConfig(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Qat(QatConfig),
    Fcn(FcnConfig),
}

impl ModelConfig {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            ModelConfig::Qat(c) => (c.d_g, c.d),
            ModelConfig::Fcn(c) => (c.d_g, c.d),
        }
    }
}

/// Operator features, one row per detector: each of its `d` elements
/// contributes `vec(Re)` then `vec(Im)`, row-major, giving `2d³` columns.
pub fn operator_features(ms: &MeasurementSet) -> Tensor {
    let d = ms.dim();
    let mut data = Vec::with_capacity(ms.len() * 2 * d * d * d);
    for det in ms.detectors() {
        for e in det.elements() {
            data.extend(e.as_slice().iter().map(|z| z.re));
            data.extend(e.as_slice().iter().map(|z| z.im));
        }
    }
    Tensor::with_shape(vec![ms.len(), 2 * d * d * d], data)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Qat(QatModel),
    Fcn(FcnModel),
}

impl Model {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        Ok(match cfg {
            ModelConfig::Qat(c) => Model::Qat(QatModel::new(c.clone())?),
            ModelConfig::Fcn(c) => Model::Fcn(FcnModel::new(c.clone())?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Qat(m) => ModelConfig::Qat(m.config().clone()),
            Model::Fcn(m) => ModelConfig::Fcn(m.config().clone()),
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Model::Qat(m) => m.params(),
            Model::Fcn(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Model::Qat(m) => m.params_mut(),
            Model::Fcn(m) => m.params_mut(),
        }
    }

    /// `freqs` is `[B, d_G, d]`, `ops` is `[d_G, 2d³]`; returns `[B, d²]`.
    pub fn forward(&self, g: &mut Graph, freqs: &Tensor, ops: &Tensor) -> Result<Var> {
        let (d_g, d) = self.config().dims();
        let s = freqs.shape();
        if s.len() != 3 || s[1] != d_g || s[2] != d {
            return shape_err(format!("frequencies {s:?} for a model expecting [B, {d_g}, {d}]"));
        }
        match self {
            Model::Qat(m) => m.forward(g, freqs, ops),
            Model::Fcn(m) => m.forward(g, freqs),
        }
    }

    /// Tape-free use of [`Model::forward`]; returns the `[B, d²]` outputs.
    pub fn predict(&self, freqs: &Tensor, ops: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, freqs, ops)?;
        Ok(g.value(out).clone())
    }
}

/// Returns the model with cross-attention queries taken from the frequency
/// stream instead of the operator embedding. Parameters are kept, so
/// checkpoints stay interchangeable. Dense models are returned unchanged.
pub fn ablate_operator_embedding(model: Model) -> Model {
    match model {
        Model::Qat(mut m) => {
            m.set_operator_embedding(false);
            Model::Qat(m)
        }
        other => other,
    }
}

/// Builds the configuration of `kind` for the given measurement dimensions.
pub fn default_config(kind: ModelKind, n_qubits: usize, d_g: usize, seed: u64) -> ModelConfig {
    let d = 1usize << n_qubits;
    match kind {
        ModelKind::Qat | ModelKind::QatNoOe => ModelConfig::Qat(QatConfig {
            operator_embedding: kind == ModelKind::Qat,
            ..QatConfig::new(n_qubits, d_g, seed)
        }),
        ModelKind::Fcn => ModelConfig::Fcn(FcnConfig { n_qubits, d_g, d, seed }),
    }
}
