//! Linear regression estimation (LRE): least-squares inversion of the
//! Born-rule map in a trace-orthonormal Hermitian basis, followed by a
//! projection onto the set of density matrices.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use crc::{Crc, CRC_64_XZ};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::povm::{FrequencyTable, MeasurementSet};
use crate::state::DensityMatrix;

pub const TIKHONOV: f64 = 1e-12;
pub const RANK_TOLERANCE: f64 = 1e-8;

/// `I/√d` followed by the generalized Gell-Mann matrices scaled to unit
/// Hilbert–Schmidt norm: symmetric and antisymmetric off-diagonal pairs for
/// each `j < k`, then the `d − 1` diagonal ones.
pub fn hermitian_basis(d: usize) -> Vec<ComplexMatrix> {
    let mut basis = Vec::with_capacity(d * d);
    basis.push(ComplexMatrix::identity(d).scale(1.0 / (d as f64).sqrt()));
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..d {
        for k in j + 1..d {
            let mut sym = ComplexMatrix::zeros(d, d);
            sym[(j, k)] = Complex64::new(h, 0.0);
            sym[(k, j)] = Complex64::new(h, 0.0);
            basis.push(sym);
            let mut anti = ComplexMatrix::zeros(d, d);
            anti[(j, k)] = Complex64::new(0.0, -h);
            anti[(k, j)] = Complex64::new(0.0, h);
            basis.push(anti);
        }
    }
    for l in 1..d {
        let norm = 1.0 / ((l * (l + 1)) as f64).sqrt();
        let mut diag = vec![0.0; d];
        for v in diag.iter_mut().take(l) {
            *v = norm;
        }
        diag[l] = -(l as f64) * norm;
        basis.push(ComplexMatrix::diagonal(&diag));
    }
    basis
}

/// Design matrix of one measurement set plus the factored normal equations
/// for the free (traceless) coordinates.
#[derive(Debug)]
pub struct LreDesign {
    d: usize,
    d_g: usize,
    operators: Vec<Complex64>,
    basis: Vec<ComplexMatrix>,
    /// `(d_G·d) × d²`, row-major.
    design: Vec<f64>,
    /// Lower Cholesky factor of `A_freeᵀ A_free + λ I`, `(d²−1)²` row-major.
    normal_factor: Vec<f64>,
}

impl LreDesign {
    pub fn new(ms: &MeasurementSet) -> Result<Self> {
        let d = ms.dim();
        let d_g = ms.len();
        let basis = hermitian_basis(d);
        let n_basis = d * d;
        let n_rows = d_g * d;
        let mut design = Vec::with_capacity(n_rows * n_basis);
        for det in ms.detectors() {
            for e in det.elements() {
                design.extend(basis.iter().map(|b| e.trace_product_re(b)));
            }
        }

        let free = n_basis - 1;
        let mut normal = vec![0.0; free * free];
        for r in 0..n_rows {
            let row = &design[r * n_basis + 1..(r + 1) * n_basis];
            for i in 0..free {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in 0..=i {
                    normal[i * free + j] += ri * row[j];
                }
            }
        }
        for i in 0..free {
            for j in 0..i {
                normal[j * free + i] = normal[i * free + j];
            }
        }

        if free > 0 {
            let as_complex = ComplexMatrix::from_vec(
                free,
                free,
                normal.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            )?;
            let eig = as_complex.hermitian_eigen();
            let relative = if eig.max() > 0.0 { eig.min() / eig.max() } else { 0.0 };
            if relative <= RANK_TOLERANCE {
                return Err(Error::RankDeficient(relative));
            }
        }
        for i in 0..free {
            normal[i * free + i] += TIKHONOV;
        }
        let normal_factor = real_cholesky(&normal, free)?;

        Ok(Self {
            d,
            d_g,
            operators: ms.operator_array(),
            basis,
            design,
            normal_factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_detectors(&self) -> usize {
        self.d_g
    }

    pub fn basis(&self) -> &[ComplexMatrix] {
        &self.basis
    }

    /// Row-major `(d_G·d) × d²` map from basis coordinates to stacked
    /// probabilities.
    pub fn design_matrix(&self) -> &[f64] {
        &self.design
    }

    /// Unconstrained-sign Hermitian estimate with unit trace.
    pub fn linear_inversion(&self, f: &FrequencyTable) -> Result<ComplexMatrix> {
        if f.rows() != self.d_g || f.cols() != self.d {
            return Err(Error::ShapeMismatch(format!(
                "frequencies {}×{} vs measurement set {}×{}",
                f.rows(),
                f.cols(),
                self.d_g,
                self.d
            )));
        }
        let n_basis = self.d * self.d;
        let free = n_basis - 1;
        let x0 = 1.0 / (self.d as f64).sqrt();
        let mut rhs = vec![0.0; free];
        for (r, &fr) in f.values().iter().enumerate() {
            let row = &self.design[r * n_basis..(r + 1) * n_basis];
            let residual = fr - row[0] * x0;
            for (acc, &a) in rhs.iter_mut().zip(&row[1..]) {
                *acc += a * residual;
            }
        }
        let x = cholesky_solve(&self.normal_factor, free, &rhs);
        let mut rho = self.basis[0].scale(x0);
        for (b, &xi) in self.basis[1..].iter().zip(&x) {
            rho = rho.add(&b.scale(xi))?;
        }
        Ok(rho.hermitian_part())
    }
}

fn real_cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= l[j * n + k] * l[j * n + k];
        }
        if !(diag > 0.0) {
            return Err(Error::NotPositive(diag));
        }
        let ljj = diag.sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    y
}

/// Euclidean projection of `values` onto the probability simplex
/// (sort descending, find the water level, clip).
pub fn project_to_simplex(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &mu) in sorted.iter().enumerate() {
        cumulative += mu;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if mu - t > 0.0 {
            theta = t;
        }
    }
    values.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Closest (Frobenius) density matrix to a Hermitian matrix.
pub fn physical_projection(hermitian: &ComplexMatrix) -> Result<DensityMatrix> {
    if !hermitian.is_square() {
        return Err(Error::DimensionMismatch {
            expected: hermitian.rows(),
            found: hermitian.cols(),
        });
    }
    if !hermitian.is_finite() {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    let eig = hermitian.hermitian_eigen();
    let projected = project_to_simplex(&eig.values);
    let total: f64 = projected.iter().sum();
    let rho = eig.reconstruct_from_values(&projected).scale(1.0 / total).hermitian_part();
    DensityMatrix::new(rho)
}

static DESIGN_CACHE: OnceLock<RwLock<HashMap<u64, Arc<LreDesign>>>> = OnceLock::new();

fn operator_hash(ops: &[Complex64]) -> u64 {
    let crc = Crc::<u64>::new(&CRC_64_XZ);
    let mut digest = crc.digest();
    for z in ops {
        digest.update(&z.re.to_le_bytes());
        digest.update(&z.im.to_le_bytes());
    }
    digest.finalize()
}

/// Design for `ms`, built once per distinct operator content and shared.
pub fn cached_design(ms: &MeasurementSet) -> Result<Arc<LreDesign>> {
    let cache = DESIGN_CACHE.get_or_init(Default::default);
    let ops = ms.operator_array();
    let key = operator_hash(&ops);
    if let Some(design) = cache.read().expect("design cache poisoned").get(&key) {
        if design.operators == ops {
            return Ok(Arc::clone(design));
        }
    }
    let design = Arc::new(LreDesign::new(ms)?);
    cache
        .write()
        .expect("design cache poisoned")
        .insert(key, Arc::clone(&design));
    Ok(design)
}

/// Linear inversion followed by projection onto physical states.
pub fn lre_estimate(f: &FrequencyTable, ms: &MeasurementSet) -> Result<DensityMatrix> {
    let design = cached_design(ms)?;
    physical_projection(&design.linear_inversion(f)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::povm::{born_probabilities, cube_measurement, Detector};
    use crate::state::fidelity;

    #[test]
    fn basis_is_trace_orthonormal() {
        for d in [2, 4, 8] {
            let b = hermitian_basis(d);
            assert_eq!(b.len(), d * d);
            for i in 0..b.len() {
                assert!(b[i].hermitian_deviation() == 0.0);
                for j in 0..b.len() {
                    let ip = b[i].trace_product_re(&b[j]);
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((ip - expected).abs() < 1e-12, "d={d} i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn simplex_projection_by_hand() {
        assert_eq!(project_to_simplex(&[1.2, -0.2]), vec![1.0, 0.0]);
        let p = project_to_simplex(&[0.5, 0.3, 0.2]);
        assert!(p.iter().zip([0.5, 0.3, 0.2]).all(|(a, b)| (a - b).abs() < 1e-15));
        // [0.6, 0.6, -0.4]: water level 0.1 over the top two.
        let p = project_to_simplex(&[0.6, 0.6, -0.4]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15 && p[2] == 0.0);
    }

    #[test]
    fn projection_examples() {
        let out = physical_projection(&ComplexMatrix::diagonal(&[1.2, -0.2])).unwrap();
        assert!(out.matrix().max_abs_diff(&ComplexMatrix::diagonal(&[1.0, 0.0])) < 1e-15);
        let mixed = DensityMatrix::maximally_mixed(4);
        let same = physical_projection(mixed.matrix()).unwrap();
        assert!(same.matrix().max_abs_diff(mixed.matrix()) < 1e-12);
    }

    #[test]
    fn exact_recovery_single_qubit() {
        let ms = cube_measurement(1).unwrap();
        let rho = DensityMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        let est = lre_estimate(&born_probabilities(&rho, &ms).unwrap(), &ms).unwrap();
        assert!(fidelity(&est, &rho) >= 1.0 - 1e-8);
    }

    #[test]
    fn single_detector_is_rank_deficient() {
        let ms = cube_measurement(1).unwrap();
        let only_z = MeasurementSet::new(vec![ms.detectors()[0].clone()], 1).unwrap();
        assert!(matches!(LreDesign::new(&only_z), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn frequency_shape_is_checked() {
        let ms = cube_measurement(2).unwrap();
        let design = LreDesign::new(&ms).unwrap();
        let f = FrequencyTable::new(1, 4, vec![0.25; 4]).unwrap();
        assert!(matches!(design.linear_inversion(&f), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn cache_returns_same_design() {
        let ms = cube_measurement(2).unwrap();
        let a = cached_design(&ms).unwrap();
        let b = cached_design(&ms).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let det: &Detector = &ms.detectors()[0];
        assert_eq!(det.dim(), 4);
    }
}
