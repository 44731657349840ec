//! Copy-budget study, loss ablation and hyperparameter sweeps.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use qst_core::dataset::{build_dataset, crc64, Dataset, DatasetConfig, MeasurementKind, StateKind};
use qst_core::povm::Copies;
use qst_nn::loss::DEFAULT_BETA;
use qst_nn::model::{ModelConfig, ModelKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ArchOverrides, TrainConfig};
use crate::error::{Result, TrainError};
use crate::eval::{evaluate_lre, EvalMetrics};
use crate::trainer::{split_indices, train, write_csv, write_json, TrainReport, TrainSummary, SUMMARY_FILE};

pub const COPY_SWEEP_FILE: &str = "copysweep.csv";
pub const COPY_SWEEP_CELLS_FILE: &str = "copysweep_cells.csv";
pub const LOSS_ABLATION_FILE: &str = "lossablation.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const CELL_FILE: &str = "cell.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Lre,
    Qat,
    QatNoOe,
    Fcn,
}

impl Method {
    fn model_kind(self) -> Option<ModelKind> {
        match self {
            Method::Lre => None,
            Method::Qat => Some(ModelKind::Qat),
            Method::QatNoOe => Some(ModelKind::QatNoOe),
            Method::Fcn => Some(ModelKind::Fcn),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.model_kind() {
            None => f.write_str("lre"),
            Some(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for Method {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "lre" {
            return Ok(Method::Lre);
        }
        Ok(match s.parse::<ModelKind>()? {
            ModelKind::Qat => Method::Qat,
            ModelKind::QatNoOe => Method::QatNoOe,
            ModelKind::Fcn => Method::Fcn,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopySweepConfig {
    pub n_qubits: usize,
    pub state_kind: StateKind,
    pub measurement_kind: MeasurementKind,
    pub srm_detectors: usize,
    /// Samples per generated dataset, holdout included.
    pub n_samples: usize,
    /// Copy budgets; `-1` stands for infinitely many copies.
    pub copies: Vec<i64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Template for the trained methods; its seed and model are overridden.
    pub train: TrainConfig,
}

/// One (budget, method, seed) evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopySweepCell {
    pub copies: String,
    pub method: String,
    pub seed: u64,
    pub mean_infidelity: f64,
    pub mean_log_infidelity: f64,
}

/// Seed-averaged row, one per (budget, method).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopySweepRow {
    pub copies: String,
    pub method: String,
    pub seeds: usize,
    pub mean_infidelity: f64,
    pub mean_log_infidelity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CopySweepTable {
    pub rows: Vec<CopySweepRow>,
    pub cells: Vec<CopySweepCell>,
}

impl CopySweepConfig {
    pub fn dataset_config(&self, copies: Copies, seed: u64) -> DatasetConfig {
        DatasetConfig {
            n_qubits: self.n_qubits,
            state_kind: self.state_kind,
            measurement_kind: self.measurement_kind,
            n_samples: self.n_samples,
            srm_detectors: self.srm_detectors,
            copies,
            seed,
        }
    }
}

fn evaluate_method(
    method: Method,
    template: &TrainConfig,
    ds: &Dataset,
    seed: u64,
    out: Option<&Path>,
) -> Result<EvalMetrics> {
    match method.model_kind() {
        None => {
            let holdout = template.holdout(ds.n_samples());
            let (_, test) = split_indices(ds.n_samples(), holdout);
            evaluate_lre(ds, &test)
        }
        Some(kind) => {
            let cfg = TrainConfig { model: kind, seed, ..template.clone() };
            Ok(train(&cfg, ds, out)?.report.summary.test)
        }
    }
}

/// Regenerates the data at every copy budget, with states shared across
/// budgets for a given seed, and retrains each model per budget.
pub fn copy_sweep(cfg: &CopySweepConfig, out: Option<&Path>) -> Result<CopySweepTable> {
    if cfg.copies.is_empty() || cfg.seeds.is_empty() || cfg.methods.is_empty() {
        return Err(TrainError::InvalidConfig("copy sweep needs budgets, seeds and methods".into()));
    }
    let budgets: Vec<Copies> = cfg.copies.iter().map(|&c| Copies::from_i64(c)).collect::<std::result::Result<_, _>>()?;
    let jobs: Vec<(usize, u64)> =
        (0..budgets.len()).flat_map(|b| cfg.seeds.iter().map(move |&s| (b, s))).collect();
    let per_job: Vec<Vec<CopySweepCell>> = jobs
        .par_iter()
        .map(|&(b, seed)| -> Result<Vec<CopySweepCell>> {
            let copies = budgets[b];
            let ds = build_dataset(&cfg.dataset_config(copies, seed))?;
            cfg.methods
                .iter()
                .map(|&m| {
                    let dir = out.map(|o| o.join("runs").join(format!("copies-{copies}_seed-{seed}_{m}")));
                    let metrics = evaluate_method(m, &cfg.train, &ds, seed, dir.as_deref())?;
                    Ok(CopySweepCell {
                        copies: copies.to_string(),
                        method: m.to_string(),
                        seed,
                        mean_infidelity: metrics.mean_infidelity,
                        mean_log_infidelity: metrics.mean_log_infidelity,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let cells: Vec<CopySweepCell> = per_job.into_iter().flatten().collect();

    let mut rows = Vec::with_capacity(budgets.len() * cfg.methods.len());
    for copies in &budgets {
        for m in &cfg.methods {
            let (c, name) = (copies.to_string(), m.to_string());
            let group: Vec<&CopySweepCell> = cells.iter().filter(|x| x.copies == c && x.method == name).collect();
            let k = group.len() as f64;
            rows.push(CopySweepRow {
                copies: c,
                method: name,
                seeds: group.len(),
                mean_infidelity: group.iter().map(|x| x.mean_infidelity).sum::<f64>() / k,
                mean_log_infidelity: group.iter().map(|x| x.mean_log_infidelity).sum::<f64>() / k,
            });
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_csv(&dir.join(COPY_SWEEP_FILE), &rows)?;
        write_csv(&dir.join(COPY_SWEEP_CELLS_FILE), &cells)?;
    }
    Ok(CopySweepTable { rows, cells })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub loss: String,
    pub beta: f64,
    pub mean_infidelity: f64,
    pub mean_log_infidelity: f64,
}

#[derive(Clone, Debug)]
pub struct LossAblation {
    pub rows: Vec<AblationRow>,
    pub reports: Vec<TrainReport>,
}

/// Loss weights compared by the ablation: MSE only, Bures only, and the
/// integrated mix.
pub fn ablation_betas(integrated: f64) -> [(&'static str, f64); 3] {
    [("mse", 0.0), ("bures", 1.0), ("integrated", integrated)]
}

/// Trains the same model on the same data and seed under each loss weight.
/// The template's `beta` sets the integrated weight.
pub fn loss_ablation(cfg: &TrainConfig, ds: &Dataset, out: Option<&Path>) -> Result<LossAblation> {
    let beta = if cfg.beta > 0.0 && cfg.beta < 1.0 { cfg.beta } else { DEFAULT_BETA };
    let runs: Vec<(AblationRow, TrainReport)> = ablation_betas(beta)
        .par_iter()
        .map(|&(name, b)| -> Result<_> {
            let run = TrainConfig { beta: b, ..cfg.clone() };
            let dir = out.map(|o| o.join(name));
            let report = train(&run, ds, dir.as_deref())?.report;
            let row = AblationRow {
                loss: name.into(),
                beta: b,
                mean_infidelity: report.summary.test.mean_infidelity,
                mean_log_infidelity: report.summary.test.mean_log_infidelity,
            };
            Ok((row, report))
        })
        .collect::<Result<_>>()?;
    let (rows, reports): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_csv(&dir.join(LOSS_ABLATION_FILE), &rows)?;
    }
    Ok(LossAblation { rows, reports })
}

/// Axes of a cartesian grid; an empty axis keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub lr: Vec<f64>,
    pub batch_size: Vec<usize>,
    #[serde(rename = "d_L")]
    pub d_l: Vec<usize>,
    #[serde(rename = "d_S")]
    pub d_s: Vec<usize>,
    #[serde(rename = "d_H")]
    pub d_h: Vec<usize>,
    pub d_rate: Vec<usize>,
    pub epochs: Vec<usize>,
}

/// Settings of one sweep cell; unset fields keep the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepCell {
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    #[serde(rename = "d_L")]
    pub d_l: Option<usize>,
    #[serde(rename = "d_S")]
    pub d_s: Option<usize>,
    #[serde(rename = "d_H")]
    pub d_h: Option<usize>,
    pub d_rate: Option<usize>,
    pub epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepSpec {
    Grid(SweepGrid),
    Cells(Vec<SweepCell>),
}

fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().map(|&v| Some(v)).collect()
    }
}

impl SweepSpec {
    /// Cells in a fixed order; for a grid the last axis varies fastest.
    pub fn cells(&self) -> Vec<SweepCell> {
        let g = match self {
            SweepSpec::Cells(c) => return c.clone(),
            SweepSpec::Grid(g) => g,
        };
        let mut out = Vec::new();
        for lr in axis(&g.lr) {
            for batch_size in axis(&g.batch_size) {
                for d_l in axis(&g.d_l) {
                    for d_s in axis(&g.d_s) {
                        for d_h in axis(&g.d_h) {
                            for d_rate in axis(&g.d_rate) {
                                for epochs in axis(&g.epochs) {
                                    out.push(SweepCell { lr, batch_size, d_l, d_s, d_h, d_rate, epochs });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

impl SweepCell {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.lr = self.lr.or(cfg.lr);
        cfg.batch_size = self.batch_size.unwrap_or(cfg.batch_size);
        cfg.epochs = self.epochs.unwrap_or(cfg.epochs);
        cfg.warmup_epochs = cfg.warmup_epochs.min(cfg.epochs);
        let a = &base.arch;
        cfg.arch = ArchOverrides {
            d_l: self.d_l.or(a.d_l),
            d_s: self.d_s.or(a.d_s),
            d_h: self.d_h.or(a.d_h),
            d_rate: self.d_rate.or(a.d_rate),
        };
        cfg
    }
}

/// Identifier of a resolved cell configuration, independent of where the
/// dataset lives.
pub fn cell_hash(cfg: &TrainConfig) -> Result<String> {
    let keyed = TrainConfig { data: Default::default(), ..cfg.clone() };
    Ok(format!("{:016x}", crc64(serde_json::to_string(&keyed)?.as_bytes())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: String,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(rename = "d_L")]
    pub d_l: Option<usize>,
    #[serde(rename = "d_S")]
    pub d_s: Option<usize>,
    #[serde(rename = "d_H")]
    pub d_h: Option<usize>,
    pub d_rate: Option<usize>,
    pub n_params: usize,
    pub best_epoch: usize,
    pub best_mean_infidelity: f64,
    pub mean_infidelity: f64,
    pub mean_log_infidelity: f64,
    pub final_train_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Hashes of cells trained by this call; the rest were reused.
    pub computed: Vec<String>,
}

fn sweep_row(hash: String, cfg: &TrainConfig, ds: &Dataset, s: &TrainSummary) -> Result<SweepRow> {
    let arch = match cfg.model_config(ds.n_qubits, ds.n_detectors())? {
        ModelConfig::Qat(c) => (Some(c.d_l), Some(c.d_s), Some(c.d_h), Some(c.d_rate)),
        ModelConfig::Fcn(_) => (None, None, None, None),
    };
    Ok(SweepRow {
        cell: hash,
        lr: cfg.base_lr(),
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        d_l: arch.0,
        d_s: arch.1,
        d_h: arch.2,
        d_rate: arch.3,
        n_params: s.n_params,
        best_epoch: s.best_epoch,
        best_mean_infidelity: s.best_mean_infidelity,
        mean_infidelity: s.test.mean_infidelity,
        mean_log_infidelity: s.test.mean_log_infidelity,
        final_train_loss: s.final_train_loss,
    })
}

/// Trains every cell not already completed under `out/cells/<hash>` and
/// writes `sweep.csv` in cell order. Completion is marked by `cell.json`,
/// written after the cell's report.
pub fn sweep(base: &TrainConfig, spec: &SweepSpec, ds: &Dataset, out: &Path) -> Result<SweepResult> {
    let cells = spec.cells();
    if cells.is_empty() {
        return Err(TrainError::InvalidConfig("sweep has no cells".into()));
    }
    let configs: Vec<TrainConfig> = cells.iter().map(|c| c.apply(base)).collect();
    for c in &configs {
        c.validate()?;
        c.model_config(ds.n_qubits, ds.n_detectors())?;
    }
    let hashes: Vec<String> = configs.iter().map(cell_hash).collect::<Result<_>>()?;
    let cell_dir = |h: &str| out.join("cells").join(h);
    let mut seen = std::collections::HashSet::new();
    let pending: Vec<usize> = (0..configs.len())
        .filter(|&i| seen.insert(hashes[i].clone()) && !cell_dir(&hashes[i]).join(CELL_FILE).exists())
        .collect();
    pending.par_iter().try_for_each(|&i| -> Result<()> {
        let dir = cell_dir(&hashes[i]);
        train(&configs[i], ds, Some(&dir))?;
        write_json(&dir.join(CELL_FILE), &configs[i])
    })?;

    let rows: Vec<SweepRow> = (0..configs.len())
        .map(|i| {
            let text = fs::read_to_string(cell_dir(&hashes[i]).join(SUMMARY_FILE))?;
            let summary: TrainSummary = serde_json::from_str(&text)?;
            sweep_row(hashes[i].clone(), &configs[i], ds, &summary)
        })
        .collect::<Result<_>>()?;
    write_csv(&out.join(SWEEP_FILE), &rows)?;
    let computed = pending.iter().map(|&i| hashes[i].clone()).collect();
    Ok(SweepResult { rows, computed })
}
