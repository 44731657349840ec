use qst_core::random::{rng, Stream};
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

pub const FCN_LAYERS: usize = 5;
pub const FCN_HIDDEN: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcnConfig {
    pub n_qubits: usize,
    #[serde(rename = "d_G")]
    pub d_g: usize,
    pub d: usize,
    pub seed: u64,
}

impl FcnConfig {
    pub fn expected_param_count(&self) -> usize {
        let input = self.d_g * self.d;
        let out = self.d * self.d;
        input * FCN_HIDDEN + FCN_HIDDEN
            + (FCN_LAYERS - 1) * (FCN_HIDDEN * FCN_HIDDEN + FCN_HIDDEN)
            + FCN_HIDDEN * out
            + out
    }
}

/// Dense baseline: five ReLU layers of width 256, then a linear map to `d²`.
#[derive(Clone, Debug, PartialEq)]
pub struct FcnModel {
    config: FcnConfig,
    params: ParamSet,
    layers: Vec<(ParamId, ParamId)>,
}

impl FcnModel {
    pub fn new(config: FcnConfig) -> Result<Self> {
        if config.n_qubits == 0 || config.d != 1 << config.n_qubits || config.d_g == 0 {
            return Err(NnError::InvalidConfig(format!(
                "dense model with n_qubits = {}, d = {}, d_G = {}",
                config.n_qubits, config.d, config.d_g
            )));
        }
        let mut r = rng(config.seed, Stream::Init);
        let mut ps = ParamSet::new();
        let mut layers = Vec::with_capacity(FCN_LAYERS + 1);
        let mut fan_in = config.d_g * config.d;
        for i in 0..FCN_LAYERS {
            let w = ps.add_uniform(format!("fc.{i}.weight"), &[fan_in, FCN_HIDDEN], fan_in, &mut r)?;
            let b = ps.add_uniform(format!("fc.{i}.bias"), &[FCN_HIDDEN], fan_in, &mut r)?;
            layers.push((w, b));
            fan_in = FCN_HIDDEN;
        }
        let out = config.d * config.d;
        let w = ps.add_uniform("out.weight", &[fan_in, out], fan_in, &mut r)?;
        let b = ps.add_uniform("out.bias", &[out], fan_in, &mut r)?;
        layers.push((w, b));
        Ok(Self { config, params: ps, layers })
    }

    pub fn config(&self) -> &FcnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn forward(&self, g: &mut Graph, freqs: &Tensor) -> Result<Var> {
        let batch = freqs.shape()[0];
        let f = g.constant(freqs.clone());
        let mut x = g.reshape(f, &[batch, self.config.d_g * self.config.d])?;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let w = g.param(&self.params, w);
            let b = g.param(&self.params, b);
            x = g.matmul(x, w)?;
            x = g.add_broadcast(x, b)?;
            if i < FCN_LAYERS {
                x = g.relu(x);
            }
        }
        Ok(x)
    }
}
