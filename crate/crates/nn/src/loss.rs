//! Losses on batches of α-vectors: Euclidean (MSE), the cosine surrogate of
//! the Bures distance, and their β-weighted sum. Every batch loss is the
//! mean of the per-sample losses.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NnError, Result};
use crate::graph::{Graph, Var};

/// Guard on the prediction norm in the Bures surrogate.
pub const NORM_EPS: f64 = 1e-12;
pub const DEFAULT_BETA: f64 = 0.09;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: DEFAULT_BETA }
    }
}

impl LossConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(NnError::InvalidConfig(format!("beta {beta} outside [0, 1]")));
        }
        Ok(Self { beta })
    }
}

/// Graph nodes of the three loss terms, all from one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub mse: Var,
    pub bures: Var,
    pub total: Var,
}

fn check_pair(g: &Graph, pred: Var, target: Var) -> Result<()> {
    let (sp, st) = (g.shape(pred), g.shape(target));
    if sp != st || sp.is_empty() {
        return shape_err(format!("loss: prediction {sp:?} vs target {st:?}"));
    }
    Ok(())
}

/// Mean squared error; for `[B, d²]` inputs the mean over all entries equals
/// the batch mean of per-sample MSEs.
pub fn mse_distance(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    check_pair(g, pred, target)?;
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean(sq))
}

/// `υ = 1 − α̂·α / (max(‖α̂‖, ε)·‖α‖)`, averaged over the batch.
pub fn bures_approx(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    check_pair(g, pred, target)?;
    let w = g.value(target).last_dim();
    let target_norms: Vec<f64> = g
        .value(target)
        .data()
        .chunks(w)
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    if let Some(&bad) = target_norms.iter().find(|&&n| n.is_nan() || n <= NORM_EPS) {
        return Err(NnError::DegenerateTarget(bad));
    }
    let tsq = g.mul(target, target)?;
    let tsq = g.sum_last(tsq)?;
    let tn = g.sqrt(tsq);

    let prod = g.mul(pred, target)?;
    let dot = g.sum_last(prod)?;
    let sq = g.mul(pred, pred)?;
    let sq_norm = g.sum_last(sq)?;
    let norm = g.sqrt(sq_norm);
    let norm = g.clamp_min(norm, NORM_EPS);
    let denom = g.mul(norm, tn)?;
    let cos = g.div(dot, denom)?;
    let neg = g.scale(cos, -1.0);
    let ups = g.add_scalar(neg, 1.0);
    Ok(g.mean(ups))
}

/// `β·υ + (1 − β)·MSE`.
pub fn integrated_loss(g: &mut Graph, pred: Var, target: Var, cfg: &LossConfig) -> Result<LossTerms> {
    let mse = mse_distance(g, pred, target)?;
    let bures = bures_approx(g, pred, target)?;
    let a = g.scale(bures, cfg.beta);
    let b = g.scale(mse, 1.0 - cfg.beta);
    let total = g.add(a, b)?;
    Ok(LossTerms { mse, bures, total })
}

/// Per-sample MSE without a graph.
pub fn mse_value(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64
}

/// Per-sample Bures surrogate without a graph.
pub fn bures_value(pred: &[f64], target: &[f64]) -> f64 {
    let dot: f64 = pred.iter().zip(target).map(|(a, b)| a * b).sum();
    let np = pred.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
    let nt = target.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (np * nt)
}
