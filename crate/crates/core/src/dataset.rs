//! Simulated tomography datasets and their on-disk container.
//!
//! A dataset directory holds `manifest.json` plus four raw little-endian
//! arrays (`freqs.f64`, `alphas.f64`, `rhos.c128`, `ops.c128`), each guarded
//! by a CRC-64/XZ checksum recorded in the manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crc::{Crc, CRC_64_XZ};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::povm::{
    born_probabilities, cube_measurement, random_srm_measurement, sample_frequencies, Copies,
    FrequencyTable, MeasurementSet,
};
use crate::random::{ginibre_mixed_state, haar_pure_state, rng, Stream};
use crate::state::{rho_to_alpha, DensityMatrix};

pub const FORMAT_NAME: &str = "qst-dataset";
pub const FORMAT_VERSION: u32 = 1;
pub const SRM_MAX_RETRIES: usize = 10;
pub const DEFAULT_SRM_DETECTORS: usize = 5;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub const FREQS_FILE: &str = "freqs.f64";
pub const ALPHAS_FILE: &str = "alphas.f64";
pub const RHOS_FILE: &str = "rhos.c128";
pub const OPS_FILE: &str = "ops.c128";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Pure,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementKind {
    Cube,
    Srm,
}

macro_rules! lowercase_enum_text {
    ($ty:ty, $($variant:ident => $text:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match self {
                    $(Self::$variant => f.write_str($text),)+
                }
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok(Self::$variant),)+
                    other => Err(Error::InvalidInput(format!(
                        "unknown {}: {other:?}",
                        stringify!($ty)
                    ))),
                }
            }
        }
    };
}

lowercase_enum_text!(StateKind, Pure => "pure", Mixed => "mixed");
lowercase_enum_text!(MeasurementKind, Cube => "cube", Srm => "srm");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_qubits: usize,
    pub state_kind: StateKind,
    pub measurement_kind: MeasurementKind,
    pub n_samples: usize,
    /// Number of detectors for SRM sets; cube sets always use `3^n`.
    pub srm_detectors: usize,
    pub copies: Copies,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 {
            return Err(Error::InvalidInput("n_qubits must be at least 1".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidInput("n_samples must be at least 1".into()));
        }
        if self.measurement_kind == MeasurementKind::Srm && self.srm_detectors == 0 {
            return Err(Error::InvalidInput("srm_detectors must be at least 1".into()));
        }
        if self.copies == Copies::Finite(0) {
            return Err(Error::InvalidInput("copies per detector must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub n_qubits: usize,
    pub state_kind: StateKind,
    pub measurement_kind: MeasurementKind,
    pub copies: Copies,
    pub seed: u64,
    measurement: MeasurementSet,
    n_samples: usize,
    frequencies: Vec<f64>,
    alphas: Vec<f64>,
    rhos: Vec<Complex64>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.measurement.dim()
    }

    pub fn n_detectors(&self) -> usize {
        self.measurement.len()
    }

    pub fn measurement(&self) -> &MeasurementSet {
        &self.measurement
    }

    /// Flat `n_samples × d_G × d`.
    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Flat `n_samples × d²`.
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Flat `n_samples × d × d`.
    pub fn rhos(&self) -> &[Complex64] {
        &self.rhos
    }

    pub fn frequency_row(&self, i: usize) -> &[f64] {
        let w = self.n_detectors() * self.dim();
        &self.frequencies[i * w..(i + 1) * w]
    }

    pub fn frequency_table(&self, i: usize) -> FrequencyTable {
        FrequencyTable::new(self.n_detectors(), self.dim(), self.frequency_row(i).to_vec())
            .expect("stored frequencies are valid")
    }

    pub fn alpha(&self, i: usize) -> &[f64] {
        let w = self.dim() * self.dim();
        &self.alphas[i * w..(i + 1) * w]
    }

    pub fn rho(&self, i: usize) -> Result<DensityMatrix> {
        let d = self.dim();
        let w = d * d;
        DensityMatrix::new(ComplexMatrix::from_vec(d, d, self.rhos[i * w..(i + 1) * w].to_vec())?)
    }
}

/// Measurement set of a configuration. SRM detectors are drawn from the
/// detector stream of the dataset seed.
pub fn measurement_for(config: &DatasetConfig) -> Result<MeasurementSet> {
    match config.measurement_kind {
        MeasurementKind::Cube => cube_measurement(config.n_qubits),
        MeasurementKind::Srm => {
            random_srm_measurement(config.n_qubits, config.srm_detectors, config.seed, SRM_MAX_RETRIES)
        }
    }
}

/// Generates samples in parallel. Sample `i` draws its state from stream
/// `State` and its frequencies from stream `Sampling`, both seeded with
/// `seed + i`, so the result does not depend on thread scheduling.
pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let measurement = measurement_for(config)?;
    let d = measurement.dim();

    let samples: Vec<(Vec<f64>, Vec<f64>, Vec<Complex64>)> = (0..config.n_samples)
        .into_par_iter()
        .map(|i| {
            let sample_seed = config.seed.wrapping_add(i as u64);
            let mut r = rng(sample_seed, Stream::State);
            let rho = match config.state_kind {
                StateKind::Pure => haar_pure_state(d, &mut r),
                StateKind::Mixed => ginibre_mixed_state(d, &mut r),
            };
            let probs = born_probabilities(&rho, &measurement)?;
            let freqs = sample_frequencies(&probs, config.copies, sample_seed);
            let alpha = rho_to_alpha(&rho)?;
            Ok((
                freqs.values().to_vec(),
                alpha.into_values(),
                rho.into_matrix().into_vec(),
            ))
        })
        .collect::<Result<_>>()?;

    let n = config.n_samples;
    let mut frequencies = Vec::with_capacity(n * measurement.len() * d);
    let mut alphas = Vec::with_capacity(n * d * d);
    let mut rhos = Vec::with_capacity(n * d * d);
    for (f, a, r) in samples {
        frequencies.extend(f);
        alphas.extend(a);
        rhos.extend(r);
    }

    Ok(Dataset {
        n_qubits: config.n_qubits,
        state_kind: config.state_kind,
        measurement_kind: config.measurement_kind,
        copies: config.copies,
        seed: config.seed,
        measurement,
        n_samples: n,
        frequencies,
        alphas,
        rhos,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    format_version: u32,
    n_qubits: usize,
    state_kind: StateKind,
    measurement_kind: MeasurementKind,
    n_samples: usize,
    #[serde(rename = "d_G")]
    d_g: usize,
    d: usize,
    copies_per_detector: i64,
    seed: u64,
    checksums: BTreeMap<String, String>,
}

pub fn crc64(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes)
}

pub fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn c128_bytes(values: &[Complex64]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|z| z.re.to_le_bytes().into_iter().chain(z.im.to_le_bytes()))
        .collect()
}

pub fn f64_from_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::ShapeMismatch(format!(
            "{} bytes is not a whole number of float64 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn c128_from_bytes(bytes: &[u8]) -> Result<Vec<Complex64>> {
    let flat = f64_from_bytes(bytes)?;
    if flat.len() % 2 != 0 {
        return Err(Error::ShapeMismatch("odd number of float64 values in a complex array".into()));
    }
    Ok(flat.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())
}

/// Writes the container into `dir` (created if missing), replacing any
/// previous files of the same names.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let files = [
        (FREQS_FILE, f64_bytes(&ds.frequencies)),
        (ALPHAS_FILE, f64_bytes(&ds.alphas)),
        (RHOS_FILE, c128_bytes(&ds.rhos)),
        (OPS_FILE, c128_bytes(&ds.measurement.operator_array())),
    ];
    let mut checksums = BTreeMap::new();
    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes)?;
        checksums.insert(name.to_string(), format!("{:016x}", crc64(bytes)));
    }
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        format_version: FORMAT_VERSION,
        n_qubits: ds.n_qubits,
        state_kind: ds.state_kind,
        measurement_kind: ds.measurement_kind,
        n_samples: ds.n_samples,
        d_g: ds.n_detectors(),
        d: ds.dim(),
        copies_per_detector: ds.copies.to_i64(),
        seed: ds.seed,
        checksums,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

fn read_checked(dir: &Path, name: &str, manifest: &Manifest) -> Result<Vec<u8>> {
    let bytes = fs::read(dir.join(name))?;
    let expected = manifest
        .checksums
        .get(name)
        .ok_or_else(|| Error::Format(format!("manifest has no checksum for {name}")))?;
    let actual = format!("{:016x}", crc64(&bytes));
    if !expected.eq_ignore_ascii_case(&actual) {
        return Err(Error::Checksum(format!(
            "{name}: manifest says {expected}, file hashes to {actual}"
        )));
    }
    Ok(bytes)
}

fn expect_len(name: &str, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::ShapeMismatch(format!(
            "{name}: expected {expected} values from the manifest, found {found}"
        )));
    }
    Ok(())
}

/// Reads a container written by [`save_dataset`]. Checksums are verified
/// before shapes.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{MANIFEST_FILE}: {e}")))?;
    if manifest.format != FORMAT_NAME {
        return Err(Error::Format(format!("unknown container format {:?}", manifest.format)));
    }
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }

    let freqs = f64_from_bytes(&read_checked(dir, FREQS_FILE, &manifest)?)?;
    let alphas = f64_from_bytes(&read_checked(dir, ALPHAS_FILE, &manifest)?)?;
    let rhos = c128_from_bytes(&read_checked(dir, RHOS_FILE, &manifest)?)?;
    let ops = c128_from_bytes(&read_checked(dir, OPS_FILE, &manifest)?)?;

    let (n, d_g, d) = (manifest.n_samples, manifest.d_g, manifest.d);
    if d != 1usize << manifest.n_qubits {
        return Err(Error::ShapeMismatch(format!(
            "d = {d} does not match n_qubits = {}",
            manifest.n_qubits
        )));
    }
    expect_len(FREQS_FILE, freqs.len(), n * d_g * d)?;
    expect_len(ALPHAS_FILE, alphas.len(), n * d * d)?;
    expect_len(RHOS_FILE, rhos.len(), n * d * d)?;
    expect_len(OPS_FILE, ops.len(), d_g * d * d * d)?;

    let measurement = MeasurementSet::from_operator_array(&ops, d_g, d)?;
    Ok(Dataset {
        n_qubits: manifest.n_qubits,
        state_kind: manifest.state_kind,
        measurement_kind: manifest.measurement_kind,
        copies: Copies::from_i64(manifest.copies_per_detector)?,
        seed: manifest.seed,
        measurement,
        n_samples: n,
        frequencies: freqs,
        alphas,
        rhos,
    })
}
