use std::fs;
use std::path::{Path, PathBuf};

use qst_core::dataset::{
    build_dataset, c128_from_bytes, load_dataset, save_dataset, DatasetConfig, MeasurementKind, StateKind,
    DEFAULT_SRM_DETECTORS,
};
use qst_core::povm::Copies;
use qst_core::state::alpha_to_rho;
use qst_core::{AlphaVector, MeasurementSet};
use qst_nn::checkpoint::load_checkpoint;
use qst_nn::gradcheck::{composite_suite, primitive_suite, GradCheck, GRAD_TOLERANCE};
use qst_nn::model::operator_features;
use qst_nn::Tensor;
use qst_train::eval::{evaluate_lre, evaluate_model};
use qst_train::experiments::{copy_sweep, loss_ablation, sweep, CopySweepConfig, Method, SweepGrid, SweepSpec};
use qst_train::trainer::{split_indices, write_csv, write_json};
use qst_train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::args::{
    list, Command, Common, CopySweepArgs, EvalArgs, GenerateArgs, GradcheckArgs, LossAblationArgs, LreArgs, SweepArgs,
    TrainArgs,
};
use crate::error::{CliError, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTION_FILE: &str = "prediction.json";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";

/// Object-wise merge; any other value in `patch` replaces the target.
fn merge(target: &mut Value, patch: Value) {
    match (target, patch) {
        (Value::Object(t), Value::Object(p)) => {
            for (k, v) in p {
                merge(t.entry(k).or_insert(Value::Null), v);
            }
        }
        (t, p) => *t = p,
    }
}

/// Defaults, then the optional config file, then flags.
fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, file: &Option<PathBuf>, flags: Value) -> Result<T> {
    let mut v = serde_json::to_value(defaults).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(path) = file {
        let text = fs::read_to_string(path)?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut v, patch);
    }
    merge(&mut v, flags);
    serde_json::from_value(v).map_err(|e| CliError::Config(e.to_string()))
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

/// Creates the output directory, refusing to reuse a non-empty one unless
/// `force` (wipe) or `keep` (reuse in place) is set.
fn prepare_out(out: &Path, force: bool, keep: bool) -> Result<()> {
    let occupied = out.exists() && (out.is_file() || fs::read_dir(out)?.next().is_some());
    if occupied && !keep {
        if !force {
            return Err(CliError::OutputExists(out.to_path_buf()));
        }
        if out.is_dir() {
            fs::remove_dir_all(out)?;
        } else {
            fs::remove_file(out)?;
        }
    }
    fs::create_dir_all(out)?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?);
    Ok(())
}

fn write_config<T: Serialize>(out: &Path, cfg: &T) -> Result<()> {
    Ok(write_json(&out.join(CONFIG_FILE), cfg)?)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Lre(a) => lre_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Copysweep(a) => copysweep_cmd(a),
        Command::Lossablation(a) => lossablation_cmd(a),
    }
}

pub fn common(command: &Command) -> &Common {
    match command {
        Command::Generate(a) => &a.common,
        Command::Train(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::Lre(a) => &a.common,
        Command::Gradcheck(a) => &a.common,
        Command::Sweep(a) => &a.common,
        Command::Copysweep(a) => &a.common,
        Command::Lossablation(a) => &a.common,
    }
}

fn default_dataset_config() -> DatasetConfig {
    DatasetConfig {
        n_qubits: 2,
        state_kind: StateKind::Pure,
        measurement_kind: MeasurementKind::Cube,
        n_samples: 11_000,
        srm_detectors: DEFAULT_SRM_DETECTORS,
        copies: Copies::Finite(10_000),
        seed: 0,
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let cfg: DatasetConfig = resolve(&default_dataset_config(), &a.common.config, a.overrides())?;
    cfg.validate()?;
    let out = required(&a.common.out, "out")?;
    prepare_out(out, a.common.force, false)?;
    let ds = build_dataset(&cfg)?;
    save_dataset(&ds, out)?;
    write_config(out, &cfg)?;
    println!("wrote {} samples ({} detectors, d = {}) to {}", ds.n_samples(), ds.n_detectors(), ds.dim(), out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg: TrainConfig = resolve(&TrainConfig::default(), &a.common.config, a.train.overrides(&a.data))?;
    cfg.validate()?;
    if cfg.data.as_os_str().is_empty() {
        return Err(CliError::Usage("--data is required".into()));
    }
    let out = required(&a.common.out, "out")?;
    let ds = load_dataset(&cfg.data)?;
    prepare_out(out, a.common.force, false)?;
    write_config(out, &cfg)?;
    let outcome = qst_train::train(&cfg, &ds, Some(out))?;
    print_json(&outcome.report.summary)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalConfig {
    checkpoint: PathBuf,
    data: Option<PathBuf>,
    freqs: Option<PathBuf>,
    ops: Option<PathBuf>,
    all: bool,
    test_samples: Option<usize>,
}

#[derive(Serialize)]
struct Prediction {
    alpha: Vec<f64>,
    rho_re: Vec<Vec<f64>>,
    rho_im: Vec<Vec<f64>>,
    purity: f64,
}

#[derive(Deserialize)]
struct FrequencyRecord {
    detector: usize,
    outcome: usize,
    frequency: f64,
}

/// Reads a `detector,outcome,frequency` CSV into a `d_G × d` table; every
/// cell must appear exactly once.
fn read_frequency_csv(path: &Path, d_g: usize, d: usize) -> Result<Vec<f64>> {
    let mut table = vec![f64::NAN; d_g * d];
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != ["detector", "outcome", "frequency"] {
        return Err(CliError::Core(qst_core::Error::Format(format!(
            "{}: header must be detector,outcome,frequency, found {}",
            path.display(),
            header.join(",")
        ))));
    }
    for rec in reader.deserialize() {
        let r: FrequencyRecord = rec?;
        if r.detector >= d_g || r.outcome >= d {
            return Err(CliError::Shape(format!(
                "entry ({}, {}) is outside the {d_g} x {d} table the model expects",
                r.detector, r.outcome
            )));
        }
        let cell = &mut table[r.detector * d + r.outcome];
        if !cell.is_nan() {
            return Err(CliError::Shape(format!("entry ({}, {}) appears twice", r.detector, r.outcome)));
        }
        if !r.frequency.is_finite() {
            return Err(CliError::Config(format!("frequency {} is not finite", r.frequency)));
        }
        *cell = r.frequency;
    }
    if let Some(missing) = table.iter().position(|x| x.is_nan()) {
        return Err(CliError::Shape(format!(
            "entry ({}, {}) is missing from {}",
            missing / d,
            missing % d,
            path.display()
        )));
    }
    Ok(table)
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let mut flags = Map::new();
    if let Some(p) = &a.checkpoint {
        flags.insert("checkpoint".into(), serde_json::json!(p));
    }
    for (k, v) in [("data", &a.data), ("freqs", &a.freqs), ("ops", &a.ops)] {
        if let Some(p) = v {
            flags.insert(k.into(), serde_json::json!(p));
        }
    }
    if a.all {
        flags.insert("all".into(), Value::Bool(true));
    }
    if let Some(t) = a.test_samples {
        flags.insert("test_samples".into(), serde_json::json!(t));
    }
    let cfg: EvalConfig = resolve(&EvalConfig::default(), &a.common.config, Value::Object(flags))?;
    if cfg.checkpoint.as_os_str().is_empty() {
        return Err(CliError::Usage("--checkpoint is required".into()));
    }
    let out = required(&a.common.out, "out")?;
    let ckpt = load_checkpoint(&cfg.checkpoint)?;
    let (d_g, d) = ckpt.model.config().dims();

    match (&cfg.data, &cfg.freqs, &cfg.ops) {
        (Some(data), None, None) => {
            let ds = load_dataset(data)?;
            let trained: TrainConfig = serde_json::from_value(ckpt.meta["train"].clone()).unwrap_or_default();
            let n = ds.n_samples();
            let indices = if cfg.all {
                (0..n).collect()
            } else {
                let holdout = TrainConfig { test_samples: cfg.test_samples.or(trained.test_samples), ..trained }
                    .holdout(n);
                split_indices(n, holdout).1
            };
            let metrics = evaluate_model(&ckpt.model, &ds, &indices)?;
            prepare_out(out, a.common.force, false)?;
            write_config(out, &cfg)?;
            write_json(&out.join(METRICS_FILE), &metrics)?;
            print_json(&metrics)
        }
        (None, Some(freqs), Some(ops)) => {
            let raw = c128_from_bytes(&fs::read(ops)?)?;
            if raw.len() != d_g * d * d * d {
                return Err(CliError::Shape(format!(
                    "{} holds {} complex values; the model expects {d_g} detectors of dimension {d} ({} values)",
                    ops.display(),
                    raw.len(),
                    d_g * d * d * d
                )));
            }
            let ms = MeasurementSet::from_operator_array(&raw, d_g, d)?;
            let table = read_frequency_csv(freqs, d_g, d)?;
            let f = Tensor::new(&[1, d_g, d], table).map_err(CliError::Nn)?;
            let alpha = ckpt.model.predict(&f, &operator_features(&ms))?.into_data();
            let rho = alpha_to_rho(&AlphaVector::new(alpha.clone())?)?;
            let m = rho.matrix();
            let pred = Prediction {
                rho_re: (0..d).map(|i| (0..d).map(|j| m[(i, j)].re).collect()).collect(),
                rho_im: (0..d).map(|i| (0..d).map(|j| m[(i, j)].im).collect()).collect(),
                purity: rho.purity(),
                alpha,
            };
            prepare_out(out, a.common.force, false)?;
            write_config(out, &cfg)?;
            write_json(&out.join(PREDICTION_FILE), &pred)?;
            print_json(&pred)
        }
        _ => Err(CliError::Usage("pass either --data or both --freqs and --ops".into())),
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct LreConfig {
    data: PathBuf,
    all: bool,
    test_samples: Option<usize>,
}

fn lre_cmd(a: LreArgs) -> Result<()> {
    let mut flags = Map::new();
    if let Some(p) = &a.data {
        flags.insert("data".into(), serde_json::json!(p));
    }
    if a.all {
        flags.insert("all".into(), Value::Bool(true));
    }
    if let Some(t) = a.test_samples {
        flags.insert("test_samples".into(), serde_json::json!(t));
    }
    let cfg: LreConfig = resolve(&LreConfig::default(), &a.common.config, Value::Object(flags))?;
    if cfg.data.as_os_str().is_empty() {
        return Err(CliError::Usage("--data is required".into()));
    }
    let out = required(&a.common.out, "out")?;
    let ds = load_dataset(&cfg.data)?;
    let n = ds.n_samples();
    let indices = if cfg.all {
        (0..n).collect()
    } else {
        split_indices(n, TrainConfig { test_samples: cfg.test_samples, ..TrainConfig::default() }.holdout(n)).1
    };
    let metrics = evaluate_lre(&ds, &indices)?;
    prepare_out(out, a.common.force, false)?;
    write_config(out, &cfg)?;
    write_json(&out.join(METRICS_FILE), &metrics)?;
    print_json(&metrics)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GradcheckConfig {
    configs: usize,
    seed: u64,
    tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { configs: 20, seed: 0, tolerance: GRAD_TOLERANCE }
    }
}

#[derive(Serialize)]
struct GradcheckRow {
    name: String,
    configs: usize,
    worst_rel_err: f64,
    passed: bool,
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let mut flags = Map::new();
    if let Some(c) = a.configs {
        flags.insert("configs".into(), serde_json::json!(c));
    }
    if let Some(s) = a.seed {
        flags.insert("seed".into(), serde_json::json!(s));
    }
    if let Some(t) = a.tolerance {
        flags.insert("tolerance".into(), serde_json::json!(t));
    }
    let cfg: GradcheckConfig = resolve(&GradcheckConfig::default(), &a.common.config, Value::Object(flags))?;
    if cfg.configs == 0 {
        return Err(CliError::Config("configs must be at least 1".into()));
    }
    let mut checks: Vec<GradCheck> = primitive_suite(cfg.configs, cfg.seed)?;
    checks.extend(composite_suite(cfg.configs, cfg.seed.wrapping_add(1))?);
    let rows: Vec<GradcheckRow> = checks
        .iter()
        .map(|c| GradcheckRow {
            name: c.name.clone(),
            configs: c.configs,
            worst_rel_err: c.worst_rel_err,
            passed: c.passed(cfg.tolerance),
        })
        .collect();
    for r in &rows {
        println!("{:<20} {:>4} {:>12.3e} {}", r.name, r.configs, r.worst_rel_err, if r.passed { "pass" } else { "FAIL" });
    }
    if let Some(out) = &a.common.out {
        prepare_out(out, a.common.force, false)?;
        write_config(out, &cfg)?;
        write_csv(&out.join(GRADCHECK_FILE), &rows)?;
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheckFailed(format!("tolerance {:e} exceeded by {}", cfg.tolerance, failed.join(", "))))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepConfig {
    train: TrainConfig,
    spec: SweepSpec,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { train: TrainConfig::default(), spec: SweepSpec::Grid(SweepGrid::default()) }
    }
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let usage = CliError::Usage;
    let grid = SweepGrid {
        lr: list(&a.grid_lr).map_err(usage)?.unwrap_or_default(),
        batch_size: list(&a.grid_batch).map_err(usage)?.unwrap_or_default(),
        d_l: list(&a.grid_layers).map_err(usage)?.unwrap_or_default(),
        d_s: list(&a.grid_width).map_err(usage)?.unwrap_or_default(),
        d_h: list(&a.grid_heads).map_err(usage)?.unwrap_or_default(),
        d_rate: list(&a.grid_mlp_ratio).map_err(usage)?.unwrap_or_default(),
        epochs: list(&a.grid_epochs).map_err(usage)?.unwrap_or_default(),
    };
    let mut flags = Map::new();
    flags.insert("train".into(), a.train.overrides(&a.data));
    if grid != SweepGrid::default() {
        flags.insert("spec".into(), serde_json::json!({ "grid": grid }));
    }
    let cfg: SweepConfig = resolve(&SweepConfig::default(), &a.common.config, Value::Object(flags))?;
    cfg.train.validate()?;
    if cfg.train.data.as_os_str().is_empty() {
        return Err(CliError::Usage("--data is required".into()));
    }
    let out = required(&a.common.out, "out")?;
    let ds = load_dataset(&cfg.train.data)?;
    prepare_out(out, a.common.force, a.resume)?;
    write_config(out, &cfg)?;
    let res = sweep(&cfg.train, &cfg.spec, &ds, out)?;
    println!("{} cells, {} trained now", res.rows.len(), res.computed.len());
    print_json(&res.rows)
}

fn default_copy_sweep() -> CopySweepConfig {
    CopySweepConfig {
        n_qubits: 2,
        state_kind: StateKind::Pure,
        measurement_kind: MeasurementKind::Cube,
        srm_detectors: DEFAULT_SRM_DETECTORS,
        n_samples: 11_000,
        copies: vec![100, 1000, 10_000],
        seeds: vec![0, 1, 2],
        methods: vec![Method::Qat, Method::Lre],
        train: TrainConfig::default(),
    }
}

fn copysweep_cmd(a: CopySweepArgs) -> Result<()> {
    let usage = CliError::Usage;
    let mut flags = Map::new();
    let mut put = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            flags.insert(k.into(), v);
        }
    };
    put("n_qubits", a.qubits.map(Into::into));
    put("state_kind", a.kind.as_ref().map(|s| s.to_ascii_lowercase().into()));
    put("measurement_kind", a.measurement.as_ref().map(|s| s.to_ascii_lowercase().into()));
    put("srm_detectors", a.srm_detectors.map(Into::into));
    put("n_samples", a.samples.map(Into::into));
    let copies: Option<Vec<Copies>> = list(&a.copies).map_err(usage)?;
    put("copies", copies.map(|c| c.iter().map(|x| x.to_i64()).collect::<Vec<_>>().into()));
    let seeds: Option<Vec<u64>> = list(&a.seeds).map_err(usage)?;
    put("seeds", seeds.map(Into::into));
    let methods: Option<Vec<Method>> = list(&a.methods).map_err(usage)?;
    put("methods", methods.map(|m| serde_json::json!(m)));
    put("train", Some(a.train.overrides(&None)));
    let cfg: CopySweepConfig = resolve(&default_copy_sweep(), &a.common.config, Value::Object(flags))?;
    cfg.train.validate()?;
    let out = required(&a.common.out, "out")?;
    prepare_out(out, a.common.force, false)?;
    write_config(out, &cfg)?;
    let table = copy_sweep(&cfg, Some(out))?;
    print_json(&table.rows)
}

fn lossablation_cmd(a: LossAblationArgs) -> Result<()> {
    let cfg: TrainConfig = resolve(&TrainConfig::default(), &a.common.config, a.train.overrides(&a.data))?;
    cfg.validate()?;
    if cfg.data.as_os_str().is_empty() {
        return Err(CliError::Usage("--data is required".into()));
    }
    let out = required(&a.common.out, "out")?;
    let ds = load_dataset(&cfg.data)?;
    prepare_out(out, a.common.force, false)?;
    write_config(out, &cfg)?;
    let ab = loss_ablation(&cfg, &ds, Some(out))?;
    print_json(&ab.rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_is_recursive_and_rightmost_wins() {
        let mut base = serde_json::json!({ "a": 1, "arch": { "d_L": 2, "d_S": 8 } });
        merge(&mut base, serde_json::json!({ "arch": { "d_S": 16 }, "b": true }));
        assert_eq!(base, serde_json::json!({ "a": 1, "b": true, "arch": { "d_L": 2, "d_S": 16 } }));
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{ "epochs": 7, "beta": 0.5, "arch": { "d_L": 3 } }"#).unwrap();
        let flags = serde_json::json!({ "beta": 0.2 });
        let cfg: TrainConfig = resolve(&TrainConfig::default(), &Some(file), flags).unwrap();
        assert_eq!((cfg.epochs, cfg.beta, cfg.arch.d_l), (7, 0.2, Some(3)));
        assert_eq!(cfg.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = resolve(&TrainConfig::default(), &None, serde_json::json!({ "epoch": 3 })).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }
}
