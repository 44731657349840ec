use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

#[derive(Debug, Parser)]
#[command(name = "qst", version, about = "Neural and linear-regression quantum state tomography")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate states, detectors and measured frequencies.
    Generate(GenerateArgs),
    /// Train a reconstructor on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset or on external frequencies.
    Eval(EvalArgs),
    /// Evaluate the linear-regression baseline on a dataset.
    Lre(LreArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train every cell of a hyperparameter grid.
    Sweep(SweepArgs),
    /// Compare methods across copy budgets.
    Copysweep(CopySweepArgs),
    /// Compare MSE, Bures and integrated losses.
    Lossablation(LossAblationArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file in the schema of the resolved `config.json`; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub qubits: Option<usize>,
    /// pure or mixed
    #[arg(long)]
    pub kind: Option<String>,
    /// cube or srm
    #[arg(long)]
    pub measurement: Option<String>,
    #[arg(long)]
    pub srm_detectors: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Copies per detector, or `inf`.
    #[arg(long)]
    pub copies: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    /// qat, qat-no-oe or fcn
    #[arg(long)]
    pub model: Option<String>,
    /// Weight of the Bures term; 0 trains on MSE alone.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Warmup length in epochs.
    #[arg(long)]
    pub warmup: Option<usize>,
    /// cosine, step or constant
    #[arg(long)]
    pub lr_kind: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Trailing samples held out for evaluation.
    #[arg(long)]
    pub test_samples: Option<usize>,
    /// Encoder layers.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Latent width.
    #[arg(long)]
    pub width: Option<usize>,
    /// Attention heads.
    #[arg(long)]
    pub heads: Option<usize>,
    /// MLP expansion ratio.
    #[arg(long)]
    pub mlp_ratio: Option<usize>,
}

fn put<T: serde::Serialize>(m: &mut Map<String, Value>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        m.insert(key.into(), serde_json::to_value(v).expect("flag values serialize"));
    }
}

impl TrainFlags {
    /// Set flags as a partial `TrainConfig` object.
    pub fn overrides(&self, data: &Option<PathBuf>) -> Value {
        let mut m = Map::new();
        put(&mut m, "data", data);
        put(&mut m, "model", &self.model.as_ref().map(|s| s.replace('_', "-")));
        put(&mut m, "beta", &self.beta);
        put(&mut m, "epochs", &self.epochs);
        put(&mut m, "batch_size", &self.batch);
        put(&mut m, "lr", &self.lr);
        put(&mut m, "warmup_epochs", &self.warmup);
        put(&mut m, "lr_kind", &self.lr_kind);
        put(&mut m, "weight_decay", &self.weight_decay);
        put(&mut m, "seed", &self.seed);
        put(&mut m, "eval_every", &self.eval_every);
        put(&mut m, "test_samples", &self.test_samples);
        let mut arch = Map::new();
        put(&mut arch, "d_L", &self.layers);
        put(&mut arch, "d_S", &self.width);
        put(&mut arch, "d_H", &self.heads);
        put(&mut arch, "d_rate", &self.mlp_ratio);
        if !arch.is_empty() {
            m.insert("arch".into(), Value::Object(arch));
        }
        Value::Object(m)
    }
}

impl GenerateArgs {
    pub fn overrides(&self) -> Value {
        let mut m = Map::new();
        put(&mut m, "n_qubits", &self.qubits);
        put(&mut m, "state_kind", &self.kind.as_ref().map(|s| s.to_ascii_lowercase()));
        put(&mut m, "measurement_kind", &self.measurement.as_ref().map(|s| s.to_ascii_lowercase()));
        put(&mut m, "srm_detectors", &self.srm_detectors);
        put(&mut m, "n_samples", &self.samples);
        put(&mut m, "copies", &self.copies);
        put(&mut m, "seed", &self.seed);
        Value::Object(m)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["freqs", "ops"])]
    pub data: Option<PathBuf>,
    /// CSV with header `detector,outcome,frequency`.
    #[arg(long, requires = "ops")]
    pub freqs: Option<PathBuf>,
    /// Little-endian complex128 operators, `[d_G, d, d, d]`.
    #[arg(long, requires = "freqs")]
    pub ops: Option<PathBuf>,
    /// Score every sample instead of the held-out split.
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub test_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LreArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub test_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Random configurations per check.
    #[arg(long)]
    pub configs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

/// Comma-separated list flag.
pub fn list<T: std::str::FromStr>(text: &Option<String>) -> std::result::Result<Option<Vec<T>>, String>
where
    T::Err: std::fmt::Display,
{
    text.as_ref()
        .map(|t| {
            t.split(',')
                .map(|x| x.trim().parse::<T>().map_err(|e| format!("bad list entry {x:?}: {e}")))
                .collect()
        })
        .transpose()
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Keep completed cells of an existing output directory.
    #[arg(long, conflicts_with = "force")]
    pub resume: bool,
    #[arg(long)]
    pub grid_lr: Option<String>,
    #[arg(long)]
    pub grid_batch: Option<String>,
    #[arg(long)]
    pub grid_layers: Option<String>,
    #[arg(long)]
    pub grid_width: Option<String>,
    #[arg(long)]
    pub grid_heads: Option<String>,
    #[arg(long)]
    pub grid_mlp_ratio: Option<String>,
    #[arg(long)]
    pub grid_epochs: Option<String>,
}

#[derive(Debug, Args)]
pub struct CopySweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub qubits: Option<usize>,
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub measurement: Option<String>,
    #[arg(long)]
    pub srm_detectors: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Comma-separated budgets; `inf` allowed.
    #[arg(long)]
    pub copies: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Comma-separated methods out of lre, qat, qat-no-oe, fcn.
    #[arg(long)]
    pub methods: Option<String>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct LossAblationArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}
