//! Fidelity statistics of reconstructed states against stored references.

use qst_core::dataset::Dataset;
use qst_core::lre::lre_estimate;
use qst_core::state::{alpha_to_rho, fidelity, log_infidelity_from_fidelity};
use qst_core::{AlphaVector, DensityMatrix};
use qst_nn::model::{operator_features, Model};
use qst_nn::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

/// Rows per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub index: usize,
    pub reason: String,
}

/// Aggregates over one evaluation set. Samples whose prediction cannot be
/// turned into a state count with fidelity 0 and are listed in `failures`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n_samples: usize,
    pub mean_fidelity: f64,
    pub min_fidelity: f64,
    pub max_fidelity: f64,
    /// Population variance.
    pub variance_fidelity: f64,
    pub mean_infidelity: f64,
    /// Mean of `log10(max(1 − F, 1e-16))`.
    pub mean_log_infidelity: f64,
    pub failures: Vec<SampleFailure>,
}

impl EvalMetrics {
    pub fn from_fidelities(fids: &[f64], failures: Vec<SampleFailure>) -> Result<Self> {
        if fids.is_empty() {
            return Err(TrainError::InvalidConfig("evaluation set is empty".into()));
        }
        let n = fids.len() as f64;
        let mean = fids.iter().sum::<f64>() / n;
        let variance = fids.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>() / n;
        Ok(Self {
            n_samples: fids.len(),
            mean_fidelity: mean,
            min_fidelity: fids.iter().cloned().fold(f64::INFINITY, f64::min),
            max_fidelity: fids.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            variance_fidelity: variance,
            mean_infidelity: fids.iter().map(|f| 1.0 - f).sum::<f64>() / n,
            mean_log_infidelity: fids.iter().map(|&f| log_infidelity_from_fidelity(f)).sum::<f64>() / n,
            failures,
        })
    }
}

/// Scores per-sample estimates against the dataset's stored states.
fn score<F>(ds: &Dataset, indices: &[usize], estimate: F) -> Result<EvalMetrics>
where
    F: Fn(usize, usize) -> qst_core::Result<DensityMatrix> + Sync,
{
    let outcomes: Vec<(f64, Option<SampleFailure>)> = indices
        .par_iter()
        .enumerate()
        .map(|(pos, &i)| -> Result<_> {
            let truth = ds.rho(i)?;
            Ok(match estimate(pos, i) {
                Ok(est) => (fidelity(&est, &truth), None),
                Err(e) => (0.0, Some(SampleFailure { index: i, reason: e.to_string() })),
            })
        })
        .collect::<Result<_>>()?;
    let fids: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let failures = outcomes.into_iter().filter_map(|o| o.1).collect();
    EvalMetrics::from_fidelities(&fids, failures)
}

/// Scores a matrix of α predictions, one row of `d²` per listed sample.
pub fn evaluate_alphas(ds: &Dataset, indices: &[usize], alphas: &[f64]) -> Result<EvalMetrics> {
    let w = ds.dim() * ds.dim();
    if alphas.len() != indices.len() * w {
        return Err(TrainError::DimensionMismatch(format!(
            "{} predicted values for {} samples of width {w}",
            alphas.len(),
            indices.len()
        )));
    }
    score(ds, indices, |pos, _| alpha_to_rho(&AlphaVector::new(alphas[pos * w..(pos + 1) * w].to_vec())?))
}

/// Gathers the frequency rows of `indices` into a `[B, d_G, d]` tensor.
pub fn gather_frequencies(ds: &Dataset, indices: &[usize]) -> Tensor {
    let (g, d) = (ds.n_detectors(), ds.dim());
    let mut data = Vec::with_capacity(indices.len() * g * d);
    for &i in indices {
        data.extend_from_slice(ds.frequency_row(i));
    }
    Tensor::new(&[indices.len(), g, d], data).expect("row width is d_G·d")
}

pub fn gather_alphas(ds: &Dataset, indices: &[usize]) -> Tensor {
    let w = ds.dim() * ds.dim();
    let mut data = Vec::with_capacity(indices.len() * w);
    for &i in indices {
        data.extend_from_slice(ds.alpha(i));
    }
    Tensor::new(&[indices.len(), w], data).expect("row width is d²")
}

pub fn check_model_fits(model: &Model, ds: &Dataset) -> Result<()> {
    let (d_g, d) = model.config().dims();
    if d_g != ds.n_detectors() || d != ds.dim() {
        return Err(TrainError::DimensionMismatch(format!(
            "model expects {d_g} detectors of dimension {d}, dataset has {} of dimension {}",
            ds.n_detectors(),
            ds.dim()
        )));
    }
    Ok(())
}

/// Model predictions for the listed samples, in order.
pub fn predict(model: &Model, ds: &Dataset, indices: &[usize], ops: &Tensor) -> Result<Vec<f64>> {
    check_model_fits(model, ds)?;
    let chunks: Vec<Vec<f64>> = indices
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<Vec<f64>> {
            Ok(model.predict(&gather_frequencies(ds, chunk), ops)?.into_data())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

pub fn evaluate_model(model: &Model, ds: &Dataset, indices: &[usize]) -> Result<EvalMetrics> {
    let ops = operator_features(ds.measurement());
    let alphas = predict(model, ds, indices, &ops)?;
    evaluate_alphas(ds, indices, &alphas)
}

/// Linear-regression baseline on the listed samples.
pub fn evaluate_lre(ds: &Dataset, indices: &[usize]) -> Result<EvalMetrics> {
    let ms = ds.measurement();
    score(ds, indices, |_, i| lre_estimate(&ds.frequency_table(i), ms))
}
