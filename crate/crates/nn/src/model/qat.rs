use qst_core::random::{rng, Stream};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NnError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QatConfig {
    pub n_qubits: usize,
    #[serde(rename = "d_G")]
    pub d_g: usize,
    pub d: usize,
    #[serde(rename = "d_S")]
    pub d_s: usize,
    #[serde(rename = "d_L")]
    pub d_l: usize,
    #[serde(rename = "d_H")]
    pub d_h: usize,
    pub d_rate: usize,
    pub seed: u64,
    /// Cross-attention queries come from the operator embedding when set,
    /// from the normalized frequency stream otherwise.
    pub operator_embedding: bool,
}

impl QatConfig {
    /// Default architecture (`d_L = 8`, `d_S = 32`, `d_H = 16`, `d_rate = 8`).
    pub fn new(n_qubits: usize, d_g: usize, seed: u64) -> Self {
        Self {
            n_qubits,
            d_g,
            d: 1 << n_qubits,
            d_s: 32,
            d_l: 8,
            d_h: 16,
            d_rate: 8,
            seed,
            operator_embedding: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if self.n_qubits == 0 || self.d != 1 << self.n_qubits {
            return bad(format!("d = {} does not match n_qubits = {}", self.d, self.n_qubits));
        }
        if self.d_g == 0 || self.d_s == 0 || self.d_h == 0 || self.d_rate == 0 {
            return bad("d_G, d_S, d_H and d_rate must be positive".into());
        }
        if !self.d_s.is_multiple_of(self.d_h) {
            return bad(format!("d_S = {} is not divisible by d_H = {}", self.d_s, self.d_h));
        }
        Ok(())
    }

    /// Per-head width `N_e = d_S / d_H`.
    pub fn head_width(&self) -> usize {
        self.d_s / self.d_h
    }

    /// Closed-form parameter count:
    /// embeddings `d·S + 2d³·S`; per layer `6S + 8S² + 2rS² + rS + S`
    /// (three norms, two attention blocks, MLP); head `G·S·d² + d²`.
    pub fn expected_param_count(&self) -> usize {
        let (s, d, g, r) = (self.d_s, self.d, self.d_g, self.d_rate);
        let embed = d * s + 2 * d * d * d * s;
        let layer = 6 * s + 8 * s * s + 2 * r * s * s + r * s + s;
        let head = g * s * d * d + d * d;
        embed + self.d_l * layer + head
    }
}

#[derive(Clone, Debug, PartialEq)]
struct AttnIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wp: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct LayerIds {
    norm: [(ParamId, ParamId); 3],
    cross: AttnIds,
    self_attn: AttnIds,
    mlp_w1: ParamId,
    mlp_b1: ParamId,
    mlp_w2: ParamId,
    mlp_b2: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QatModel {
    config: QatConfig,
    params: ParamSet,
    theta_f: ParamId,
    theta_m: ParamId,
    layers: Vec<LayerIds>,
    head_w: ParamId,
    head_b: ParamId,
    position: Tensor,
}

/// Sinusoidal table: `PE(η, 2i) = sin(η / 10000^{2i/S})`,
/// `PE(η, 2i+1) = cos(η / 10000^{2i/S})`.
pub fn position_encoding(rows: usize, width: usize) -> Tensor {
    Tensor::from_fn(&[rows, width], |idx| {
        let (eta, col) = (idx / width, idx % width);
        let two_i = (col - col % 2) as f64;
        let angle = eta as f64 / 10000f64.powf(two_i / width as f64);
        if col % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Multi-head attention on `[B, T, S]` inputs. Per head `h`,
/// `Q = q_src·W_q⁽ʰ⁾`, `K = x·W_k⁽ʰ⁾`, `V = x·W_v⁽ʰ⁾`, and the head output is
/// `softmax(QKᵀ/√N_e)·V`; heads are concatenated and projected by `W_p`.
/// Returns the output and the `[B, H, T, T]` attention weights.
pub fn multi_head_attention(
    g: &mut Graph,
    x: Var,
    q_src: Var,
    weights: [Var; 4],
    heads: usize,
) -> Result<(Var, Var)> {
    let [wq, wk, wv, wp] = weights;
    let width = *g.shape(x).last().unwrap_or(&0);
    if heads == 0 || !width.is_multiple_of(heads) {
        return shape_err(format!("width {width} is not divisible into {heads} heads"));
    }
    let q = g.matmul(q_src, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let q = g.split_heads(q, heads)?;
    let k = g.split_heads(k, heads)?;
    let v = g.split_heads(v, heads)?;
    let kt = g.transpose_last2(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / ((width / heads) as f64).sqrt());
    let att = g.softmax_lastdim(scores)?;
    let ctx = g.matmul(att, v)?;
    let ctx = g.merge_heads(ctx)?;
    Ok((g.matmul(ctx, wp)?, att))
}

impl QatModel {
    pub fn new(config: QatConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng(config.seed, Stream::Init);
        let mut ps = ParamSet::new();
        let (s, d) = (config.d_s, config.d);
        let op_width = 2 * d * d * d;
        let hidden = s * config.d_rate;

        let theta_f = ps.add_uniform("embed.freq", &[d, s], d, &mut r)?;
        let theta_m = ps.add_uniform("embed.op", &[op_width, s], op_width, &mut r)?;
        let mut layers = Vec::with_capacity(config.d_l);
        for l in 0..config.d_l {
            let norm = |ps: &mut ParamSet, i: usize| -> Result<(ParamId, ParamId)> {
                let gain = ps.add(format!("layer.{l}.norm{i}.gain"), Tensor::from_fn(&[s], |_| 1.0))?;
                let bias = ps.add(format!("layer.{l}.norm{i}.bias"), Tensor::zeros(&[s]))?;
                Ok((gain, bias))
            };
            let n1 = norm(&mut ps, 1)?;
            let mut attn = |ps: &mut ParamSet, kind: &str| -> Result<AttnIds> {
                Ok(AttnIds {
                    wq: ps.add_uniform(format!("layer.{l}.{kind}.wq"), &[s, s], s, &mut r)?,
                    wk: ps.add_uniform(format!("layer.{l}.{kind}.wk"), &[s, s], s, &mut r)?,
                    wv: ps.add_uniform(format!("layer.{l}.{kind}.wv"), &[s, s], s, &mut r)?,
                    wp: ps.add_uniform(format!("layer.{l}.{kind}.wp"), &[s, s], s, &mut r)?,
                })
            };
            let cross = attn(&mut ps, "cross")?;
            let n2 = norm(&mut ps, 2)?;
            let self_attn = attn(&mut ps, "self")?;
            let n3 = norm(&mut ps, 3)?;
            let mlp_w1 = ps.add_uniform(format!("layer.{l}.mlp.w1"), &[s, hidden], s, &mut r)?;
            let mlp_b1 = ps.add_uniform(format!("layer.{l}.mlp.b1"), &[hidden], s, &mut r)?;
            let mlp_w2 = ps.add_uniform(format!("layer.{l}.mlp.w2"), &[hidden, s], hidden, &mut r)?;
            let mlp_b2 = ps.add_uniform(format!("layer.{l}.mlp.b2"), &[s], hidden, &mut r)?;
            layers.push(LayerIds {
                norm: [n1, n2, n3],
                cross,
                self_attn,
                mlp_w1,
                mlp_b1,
                mlp_w2,
                mlp_b2,
            });
        }
        let flat = config.d_g * s;
        let head_w = ps.add_uniform("head.weight", &[flat, d * d], flat, &mut r)?;
        let head_b = ps.add_uniform("head.bias", &[d * d], flat, &mut r)?;
        let position = position_encoding(config.d_g, s);
        Ok(Self { config, params: ps, theta_f, theta_m, layers, head_w, head_b, position })
    }

    pub fn config(&self) -> &QatConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn set_operator_embedding(&mut self, on: bool) {
        self.config.operator_embedding = on;
    }

    fn attn_vars(&self, g: &mut Graph, ids: &AttnIds) -> [Var; 4] {
        [
            g.param(&self.params, ids.wq),
            g.param(&self.params, ids.wk),
            g.param(&self.params, ids.wv),
            g.param(&self.params, ids.wp),
        ]
    }

    /// Frequency stream after the last layer, `[B, d_G, d_S]`.
    pub fn encode(&self, g: &mut Graph, freqs: &Tensor, ops: &Tensor) -> Result<Var> {
        self.encode_with(g, freqs, ops, true)
    }

    /// [`QatModel::encode`] with the position table optionally left out.
    pub fn encode_with(&self, g: &mut Graph, freqs: &Tensor, ops: &Tensor, with_position: bool) -> Result<Var> {
        let c = &self.config;
        let batch = freqs.shape()[0];
        let op_width = 2 * c.d * c.d * c.d;
        if self.config.operator_embedding && ops.shape() != [c.d_g, op_width] {
            return shape_err(format!("operator features {:?}, expected [{}, {op_width}]", ops.shape(), c.d_g));
        }

        let f = g.constant(freqs.clone());
        let theta_f = g.param(&self.params, self.theta_f);
        let mut x = g.matmul(f, theta_f)?;
        if with_position {
            let pe = g.constant(self.position.clone());
            x = g.add_broadcast(x, pe)?;
        }
        let op_queries = if self.config.operator_embedding {
            let o = g.constant(ops.clone());
            let theta_m = g.param(&self.params, self.theta_m);
            let o_emb = g.matmul(o, theta_m)?;
            Some(g.broadcast_batch(o_emb, batch))
        } else {
            None
        };

        for layer in &self.layers {
            let [(g1, b1), (g2, b2), (g3, b3)] = layer.norm;
            let (g1, b1) = (g.param(&self.params, g1), g.param(&self.params, b1));
            let h = g.layer_norm(x, g1, b1)?;
            let q_src = op_queries.unwrap_or(h);
            let w = self.attn_vars(g, &layer.cross);
            let (a, _) = multi_head_attention(g, h, q_src, w, c.d_h)?;
            x = g.add(x, a)?;

            let (g2, b2) = (g.param(&self.params, g2), g.param(&self.params, b2));
            let h = g.layer_norm(x, g2, b2)?;
            let w = self.attn_vars(g, &layer.self_attn);
            let (a, _) = multi_head_attention(g, h, h, w, c.d_h)?;
            x = g.add(x, a)?;

            let (g3, b3) = (g.param(&self.params, g3), g.param(&self.params, b3));
            let h = g.layer_norm(x, g3, b3)?;
            let w1 = g.param(&self.params, layer.mlp_w1);
            let bb1 = g.param(&self.params, layer.mlp_b1);
            let w2 = g.param(&self.params, layer.mlp_w2);
            let bb2 = g.param(&self.params, layer.mlp_b2);
            let m = g.matmul(h, w1)?;
            let m = g.add_broadcast(m, bb1)?;
            let m = g.gelu(m);
            let m = g.matmul(m, w2)?;
            let m = g.add_broadcast(m, bb2)?;
            x = g.add(x, m)?;
        }
        Ok(x)
    }

    pub fn forward(&self, g: &mut Graph, freqs: &Tensor, ops: &Tensor) -> Result<Var> {
        let batch = freqs.shape()[0];
        let x = self.encode(g, freqs, ops)?;
        let flat = g.reshape(x, &[batch, self.config.d_g * self.config.d_s])?;
        let w = g.param(&self.params, self.head_w);
        let b = g.param(&self.params, self.head_b);
        let out = g.matmul(flat, w)?;
        g.add_broadcast(out, b)
    }
}
