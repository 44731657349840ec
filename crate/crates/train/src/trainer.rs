use std::fs;
use std::path::Path;
use std::time::Instant;

use qst_core::dataset::Dataset;
use qst_core::random::{rng, Stream};
use qst_nn::checkpoint::save_checkpoint;
use qst_nn::loss::{integrated_loss, LossConfig};
use qst_nn::model::{operator_features, Model};
use qst_nn::optim::{adam_step, lr_schedule, AdamConfig, AdamState};
use qst_nn::Graph;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Result, TrainError};
use crate::eval::{check_model_fits, evaluate_model, gather_alphas, gather_frequencies, EvalMetrics};

pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMING_FILE: &str = "timing.csv";
pub const BEST_DIR: &str = "best";
pub const FINAL_DIR: &str = "final";

/// One row of `report.csv`. Training losses are sample-weighted means over
/// the epoch, taken from the forward pass that produced each update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub train_bures: f64,
    pub train_loss: f64,
    pub eval_mean_infidelity: Option<f64>,
    pub eval_mean_log_infidelity: Option<f64>,
    /// Learning rate of the epoch's first step.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: String,
    pub n_params: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_mean_infidelity: f64,
    pub final_train_mse: f64,
    pub final_train_bures: f64,
    pub final_train_loss: f64,
    /// Test metrics of the model after the last epoch.
    pub test: EvalMetrics,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub wall_seconds: Vec<f64>,
    pub summary: TrainSummary,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub model: Model,
    pub adam: AdamState,
}

/// Training and held-out index sets: the trailing `holdout` samples are
/// held out. With no holdout the training set doubles as the evaluation set.
pub fn split_indices(n: usize, holdout: usize) -> (Vec<usize>, Vec<usize>) {
    let cut = n - holdout.min(n);
    let train: Vec<usize> = (0..cut).collect();
    let test: Vec<usize> = if holdout == 0 { train.clone() } else { (cut..n).collect() };
    (train, test)
}

struct EpochSums {
    mse: f64,
    bures: f64,
    total: f64,
    rows: usize,
}

/// Trains on an in-memory dataset. When `out` is given, writes the report,
/// summary, timing log and `best/` and `final/` checkpoints under it.
pub fn train(cfg: &TrainConfig, ds: &Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model_cfg = cfg.model_config(ds.n_qubits, ds.n_detectors())?;
    let mut model = Model::new(&model_cfg)?;
    check_model_fits(&model, ds)?;
    let (train_idx, test_idx) = split_indices(ds.n_samples(), cfg.holdout(ds.n_samples()));
    if train_idx.is_empty() {
        return Err(TrainError::InvalidConfig("no training samples left after the holdout".into()));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }

    let ops = operator_features(ds.measurement());
    let loss_cfg = LossConfig::new(cfg.beta)?;
    let adam_cfg = AdamConfig { weight_decay: cfg.weight_decay, ..AdamConfig::default() };
    let mut adam = AdamState::new(model.params());
    let mut shuffle_rng = rng(cfg.seed, Stream::Shuffle);
    let steps_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let warmup_steps = cfg.warmup_epochs * steps_per_epoch;
    let base_lr = cfg.base_lr();

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut wall = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut last_eval = None;
    let mut order = train_idx.clone();
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut sums = EpochSums { mse: 0.0, bures: 0.0, total: 0.0, rows: 0 };
        let first_lr = lr_schedule(step, total_steps, base_lr, warmup_steps, cfg.lr_kind);
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let lr = lr_schedule(step, total_steps, base_lr, warmup_steps, cfg.lr_kind);
            let freqs = gather_frequencies(ds, batch);
            let mut g = Graph::new();
            let pred = model.forward(&mut g, &freqs, &ops)?;
            let target = g.constant(gather_alphas(ds, batch));
            let terms = integrated_loss(&mut g, pred, target, &loss_cfg)?;
            let (mse, bures, total) =
                (g.value(terms.mse).item(), g.value(terms.bures).item(), g.value(terms.total).item());
            if !(mse.is_finite() && bures.is_finite() && total.is_finite()) {
                return Err(TrainError::NonFiniteLoss { epoch, batch: batch_no });
            }
            let rows = batch.len() as f64;
            sums.mse += mse * rows;
            sums.bures += bures * rows;
            sums.total += total * rows;
            sums.rows += batch.len();

            let grads = g.backward(terms.total)?;
            model.params_mut().zero_grad();
            grads.accumulate_into(model.params_mut());
            adam_step(model.params_mut(), &mut adam, lr, &adam_cfg);
            step += 1;
        }

        let n = sums.rows as f64;
        let mut record = EpochRecord {
            epoch,
            train_mse: sums.mse / n,
            train_bures: sums.bures / n,
            train_loss: sums.total / n,
            eval_mean_infidelity: None,
            eval_mean_log_infidelity: None,
            lr: first_lr,
        };
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let metrics = evaluate_model(&model, ds, &test_idx)?;
            record.eval_mean_infidelity = Some(metrics.mean_infidelity);
            record.eval_mean_log_infidelity = Some(metrics.mean_log_infidelity);
            if best.is_none_or(|(_, b)| metrics.mean_infidelity < b) {
                best = Some((epoch, metrics.mean_infidelity));
                if let Some(dir) = out {
                    let meta = checkpoint_meta(cfg, epoch, &metrics);
                    save_checkpoint(&dir.join(BEST_DIR), &model, Some(&adam), &meta)?;
                }
            }
            last_eval = Some(metrics);
        }
        records.push(record);
        wall.push(started.elapsed().as_secs_f64());
    }

    let test = last_eval.expect("the last epoch is always evaluated");
    let (best_epoch, best_mean_infidelity) = best.expect("at least one evaluation");
    let last = records.last().expect("epochs >= 1");
    let summary = TrainSummary {
        model: cfg.model.to_string(),
        n_params: model.params().num_scalars(),
        train_samples: train_idx.len(),
        test_samples: test_idx.len(),
        epochs: cfg.epochs,
        best_epoch,
        best_mean_infidelity,
        final_train_mse: last.train_mse,
        final_train_bures: last.train_bures,
        final_train_loss: last.train_loss,
        test,
    };
    let report = TrainReport { records, wall_seconds: wall, summary };
    if let Some(dir) = out {
        let meta = checkpoint_meta(cfg, cfg.epochs, &report.summary.test);
        save_checkpoint(&dir.join(FINAL_DIR), &model, Some(&adam), &meta)?;
        write_report(dir, &report)?;
    }
    Ok(TrainOutcome { report, model, adam })
}

/// Loads the dataset named in the configuration and trains on it.
pub fn train_from_config(cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    let ds = qst_core::dataset::load_dataset(&cfg.data)?;
    train(cfg, &ds, out)
}

fn checkpoint_meta(cfg: &TrainConfig, epoch: usize, metrics: &EvalMetrics) -> serde_json::Value {
    serde_json::json!({
        "epoch": epoch,
        "eval_mean_infidelity": metrics.mean_infidelity,
        "train": cfg,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `report.csv` and `summary.json` hold no timing, so reruns are
/// byte-identical; wall-clock seconds go to `timing.csv`.
pub fn write_report(dir: &Path, report: &TrainReport) -> Result<()> {
    write_csv(&dir.join(REPORT_FILE), &report.records)?;
    write_json(&dir.join(SUMMARY_FILE), &report.summary)?;
    #[derive(Serialize)]
    struct Timing {
        epoch: usize,
        seconds: f64,
    }
    let timing: Vec<Timing> =
        report.wall_seconds.iter().enumerate().map(|(i, &s)| Timing { epoch: i + 1, seconds: s }).collect();
    write_csv(&dir.join(TIMING_FILE), &timing)
}

pub fn read_report(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
