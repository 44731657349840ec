//! Detectors (POVMs), Born-rule probabilities and finite-copy sampling.
//!
//! # Cube measurement ordering
//!
//! For `n` qubits there are `3^n` detectors. Detector `η` picks one Pauli
//! axis per qubit, read as base-3 digits of `η` with qubit 0 most
//! significant and digit `0 = z`, `1 = y`, `2 = x`. Within a detector,
//! element `γ` picks one eigenvector per qubit, read as binary digits of `γ`
//! with qubit 0 most significant and bit `0 = +1` eigenvector,
//! `1 = −1` eigenvector. So for two qubits detector 0 is `zz` with elements
//! `|00⟩⟨00|, |01⟩⟨01|, |10⟩⟨10|, |11⟩⟨11|`.
//!
//! Eigenvectors: `z: |0⟩, |1⟩`; `y: (|0⟩ ± i|1⟩)/√2`; `x: (|0⟩ ± |1⟩)/√2`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::linalg::{inverse_sqrt, ComplexMatrix, PSD_TOLERANCE};
use crate::random::{self, Stream};
use crate::state::DensityMatrix;

pub const COMPLETENESS_TOLERANCE: f64 = 1e-9;
pub const MAX_CUBE_QUBITS: usize = 4;
/// Smallest admissible eigenvalue of an SRM Gram matrix.
pub const GRAM_MIN_EIGENVALUE: f64 = 1e-8;
const PROBABILITY_SLACK: f64 = 1e-10;

/// One measurement setting: `d` PSD operators summing to the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Detector {
    elements: Vec<ComplexMatrix>,
    label: String,
}

impl Detector {
    /// Checks Hermiticity, positivity and completeness of `elements`.
    pub fn new(elements: Vec<ComplexMatrix>, label: impl Into<String>) -> Result<Self> {
        let d = elements.first().map(ComplexMatrix::rows).unwrap_or(0);
        if d == 0 {
            return Err(Error::InvalidInput("detector without elements".into()));
        }
        let mut sum = ComplexMatrix::zeros(d, d);
        for e in &elements {
            if e.rows() != d || e.cols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: e.rows(),
                });
            }
            let dev = e.hermitian_deviation();
            if dev > PSD_TOLERANCE {
                return Err(Error::NotHermitian(dev));
            }
            let min = e.hermitian_eigen().min();
            if min < -PSD_TOLERANCE {
                return Err(Error::NotPsd(min));
            }
            sum = sum.add(e)?;
        }
        let dev = sum.max_abs_diff(&ComplexMatrix::identity(d));
        if dev > COMPLETENESS_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "detector elements do not sum to identity (deviation {dev:e})"
            )));
        }
        Ok(Self {
            elements,
            label: label.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.elements[0].rows()
    }

    pub fn elements(&self) -> &[ComplexMatrix] {
        &self.elements
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// An ordered list of detectors on `n_qubits`. Detector order defines the
/// row order of every [`FrequencyTable`] measured with it.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    detectors: Vec<Detector>,
    n_qubits: usize,
}

impl MeasurementSet {
    pub fn new(detectors: Vec<Detector>, n_qubits: usize) -> Result<Self> {
        let d = 1usize << n_qubits;
        if detectors.is_empty() {
            return Err(Error::InvalidInput("empty measurement set".into()));
        }
        for det in &detectors {
            if det.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: det.dim(),
                });
            }
        }
        Ok(Self { detectors, n_qubits })
    }

    /// Builds a set from a flat `d_G × d × d × d` operator array (the layout
    /// of [`MeasurementSet::operator_array`]). Every detector is validated.
    pub fn from_operator_array(ops: &[Complex64], d_g: usize, d: usize) -> Result<Self> {
        let n_qubits = d.trailing_zeros() as usize;
        if d == 0 || !d.is_power_of_two() {
            return Err(Error::UnsupportedSize(format!("dimension {d} is not a power of two")));
        }
        if ops.len() != d_g * d * d * d {
            return Err(Error::ShapeMismatch(format!(
                "operator array has {} entries, expected {}",
                ops.len(),
                d_g * d * d * d
            )));
        }
        let block = d * d;
        let detectors = (0..d_g)
            .map(|eta| {
                let elements = (0..d)
                    .map(|g| {
                        let start = (eta * d + g) * block;
                        ComplexMatrix::from_vec(d, d, ops[start..start + block].to_vec())
                    })
                    .collect::<Result<Vec<_>>>()?;
                Detector::new(elements, format!("op{eta}"))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(detectors, n_qubits)
    }

    pub fn detectors(&self) -> &[Detector] {
        &self.detectors
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    /// `d_G`
    pub fn len(&self) -> usize {
        self.detectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detectors.is_empty()
    }

    /// Flat `d_G × d × d × d` array, detector-major then element then
    /// row-major matrix entries.
    pub fn operator_array(&self) -> Vec<Complex64> {
        self.detectors
            .iter()
            .flat_map(|det| det.elements.iter())
            .flat_map(|e| e.as_slice().iter().copied())
            .collect()
    }

    /// A copy with detectors reordered: detector `i` of the result is
    /// detector `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            detectors: order.iter().map(|&i| self.detectors[i].clone()).collect(),
            n_qubits: self.n_qubits,
        }
    }
}

/// `d_G × d` table of outcome frequencies, one row per detector.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyTable {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FrequencyTable {
    /// Requires nonnegative entries and rows summing to 1 within `1e-9`.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "frequency table has {} entries, expected {rows}×{cols}",
                values.len()
            )));
        }
        for (r, row) in values.chunks(cols.max(1)).enumerate() {
            if let Some(&bad) = row.iter().find(|x| !(**x >= 0.0 && **x <= 1.0)) {
                return Err(Error::InvalidProbability(bad));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > COMPLETENESS_TOLERANCE {
                return Err(Error::InvalidInput(format!("row {r} sums to {s}")));
            }
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn permuted_rows(&self, order: &[usize]) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: order.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
        }
    }
}

/// Number of copies measured per detector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Copies {
    Finite(u64),
    /// Frequencies equal the exact probabilities.
    Infinite,
}

impl Copies {
    /// `-1` encodes the infinite mode in manifests.
    pub fn to_i64(self) -> i64 {
        match self {
            Copies::Finite(n) => n as i64,
            Copies::Infinite => -1,
        }
    }

    pub fn from_i64(v: i64) -> Result<Self> {
        match v {
            -1 => Ok(Copies::Infinite),
            n if n >= 1 => Ok(Copies::Finite(n as u64)),
            n => Err(Error::InvalidInput(format!("invalid copy count {n}"))),
        }
    }
}

impl std::fmt::Display for Copies {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Copies::Finite(n) => write!(f, "{n}"),
            Copies::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Copies {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inf" | "infinite" | "-1" => Ok(Copies::Infinite),
            _ => {
                let n: u64 = s
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("invalid copy count '{s}'")))?;
                Copies::from_i64(n as i64)
            }
        }
    }
}

/// Serialized as the copy count, or the string `"inf"`.
impl serde::Serialize for Copies {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Copies::Finite(n) => s.serialize_u64(*n),
            Copies::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> serde::Deserialize<'de> for Copies {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(i64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Count(n) => Copies::from_i64(n),
            Raw::Text(t) => t.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

fn pauli_eigenvectors(axis: usize) -> [[Complex64; 2]; 2] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let c = Complex64::new;
    match axis {
        0 => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]],
        1 => [[c(h, 0.0), c(0.0, h)], [c(h, 0.0), c(0.0, -h)]],
        2 => [[c(h, 0.0), c(h, 0.0)], [c(h, 0.0), c(-h, 0.0)]],
        _ => unreachable!("axis index is a base-3 digit"),
    }
}

const AXIS_LABELS: [char; 3] = ['z', 'y', 'x'];

/// The `3^n` tensor-product Pauli-eigenbasis detectors, ordered as described
/// in the module docs.
pub fn cube_measurement(n_qubits: usize) -> Result<MeasurementSet> {
    if n_qubits == 0 || n_qubits > MAX_CUBE_QUBITS {
        return Err(Error::UnsupportedSize(format!(
            "cube measurement supports 1..={MAX_CUBE_QUBITS} qubits, got {n_qubits}"
        )));
    }
    let d = 1usize << n_qubits;
    let n_detectors = 3usize.pow(n_qubits as u32);
    let mut detectors = Vec::with_capacity(n_detectors);
    for eta in 0..n_detectors {
        let axes: Vec<usize> = (0..n_qubits)
            .map(|q| (eta / 3usize.pow((n_qubits - 1 - q) as u32)) % 3)
            .collect();
        let label: String = axes.iter().map(|&a| AXIS_LABELS[a]).collect();
        let elements = (0..d)
            .map(|gamma| {
                let mut psi = vec![Complex64::new(1.0, 0.0)];
                for (q, &axis) in axes.iter().enumerate() {
                    let bit = (gamma >> (n_qubits - 1 - q)) & 1;
                    let v = pauli_eigenvectors(axis)[bit];
                    psi = psi.iter().flat_map(|&a| [a * v[0], a * v[1]]).collect();
                }
                ComplexMatrix::outer(&psi)
            })
            .collect();
        detectors.push(Detector::new(elements, label)?);
    }
    MeasurementSet::new(detectors, n_qubits)
}

/// Square-root measurement `Λ^{-1/2}|ψ_γ⟩⟨ψ_γ|Λ^{-1/2}` with
/// `Λ = Σ_γ |ψ_γ⟩⟨ψ_γ|`.
pub fn srm_detector(states: &[Vec<Complex64>]) -> Result<Detector> {
    let d = states.first().map(Vec::len).unwrap_or(0);
    if d == 0 || states.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: states.len(),
        });
    }
    let projectors: Vec<ComplexMatrix> = states
        .iter()
        .map(|psi| {
            if psi.len() != d {
                Err(Error::DimensionMismatch {
                    expected: d,
                    found: psi.len(),
                })
            } else {
                Ok(ComplexMatrix::outer(psi))
            }
        })
        .collect::<Result<_>>()?;
    let mut gram = ComplexMatrix::zeros(d, d);
    for p in &projectors {
        gram = gram.add(p)?;
    }
    let inv_sqrt = inverse_sqrt(&gram, GRAM_MIN_EIGENVALUE)?;
    let elements = projectors
        .iter()
        .map(|p| inv_sqrt.mul(p).mul(&inv_sqrt).hermitian_part())
        .collect();
    Detector::new(elements, "srm")
}

/// SRM detector from `d` Haar-random states, redrawing on a singular Gram
/// matrix up to `max_retries` times.
pub fn random_srm_detector<R: Rng + ?Sized>(dim: usize, rng: &mut R, max_retries: usize) -> Result<Detector> {
    let mut last = Error::SingularGram(0.0);
    for _ in 0..=max_retries {
        let states: Vec<_> = (0..dim).map(|_| random::haar_state_vector(dim, rng)).collect();
        match srm_detector(&states) {
            Ok(det) => return Ok(det),
            Err(e @ Error::SingularGram(_)) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// `K` random SRM detectors on `n_qubits`, drawn from the detector stream of
/// `seed`.
pub fn random_srm_measurement(n_qubits: usize, n_detectors: usize, seed: u64, max_retries: usize) -> Result<MeasurementSet> {
    let d = 1usize << n_qubits;
    let mut rng = random::rng(seed, Stream::Detectors);
    let detectors = (0..n_detectors)
        .map(|k| {
            let mut det = random_srm_detector(d, &mut rng, max_retries)?;
            det.label = format!("srm{k}");
            Ok(det)
        })
        .collect::<Result<Vec<_>>>()?;
    MeasurementSet::new(detectors, n_qubits)
}

/// `p[η][γ] = Re Tr(O_ηγ ρ)`.
pub fn born_probabilities(rho: &DensityMatrix, ms: &MeasurementSet) -> Result<FrequencyTable> {
    let d = ms.dim();
    if rho.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: rho.dim(),
        });
    }
    let mut values = Vec::with_capacity(ms.len() * d);
    for det in ms.detectors() {
        for e in det.elements() {
            let p = e.trace_product_re(rho.matrix());
            if !(-PROBABILITY_SLACK..=1.0 + PROBABILITY_SLACK).contains(&p) {
                return Err(Error::InvalidProbability(p));
            }
            values.push(p.clamp(0.0, 1.0));
        }
    }
    FrequencyTable::new(ms.len(), d, values)
}

/// Independent multinomial draw of `N_t` outcomes per row, returned as
/// counts / `N_t`. Each multinomial is drawn as a chain of binomials
/// (outcome `γ` gets `Binomial(remaining, p_γ / remaining mass)`) from the
/// sampling stream of `seed`.
pub fn sample_frequencies(probs: &FrequencyTable, copies: Copies, seed: u64) -> FrequencyTable {
    let n = match copies {
        Copies::Infinite => return probs.clone(),
        Copies::Finite(n) => n,
    };
    let mut rng = random::rng(seed, Stream::Sampling);
    let mut values = Vec::with_capacity(probs.values.len());
    for r in 0..probs.rows {
        let row = probs.row(r);
        let mut remaining = n;
        let mut mass: f64 = row.iter().sum();
        for (g, &p) in row.iter().enumerate() {
            let count = if g + 1 == row.len() {
                remaining
            } else if remaining == 0 || p <= 0.0 {
                0
            } else {
                let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
                Binomial::new(remaining, q)
                    .expect("q is a probability")
                    .sample(&mut rng)
            };
            values.push(count as f64 / n as f64);
            remaining -= count;
            mass -= p;
        }
    }
    FrequencyTable {
        rows: probs.rows,
        cols: probs.cols,
        values,
    }
}
