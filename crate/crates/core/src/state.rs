//! Density matrices, the Cholesky α-vector parameterization, and
//! fidelity-derived distances.
//!
//! An α-vector of a `d`-dimensional state has `d²` entries: the `d` diagonal
//! entries of the lower-triangular factor `L`, followed by `Re L[i][j]`,
//! `Im L[i][j]` for every `i > j` in row-major lower-triangle order
//! (`(1,0), (2,0), (2,1), (3,0), …`).

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, ComplexMatrix, PSD_TOLERANCE};

pub const HERMITIAN_TOLERANCE: f64 = 1e-10;
pub const TRACE_TOLERANCE: f64 = 1e-10;

/// Identity mixing weight applied before Cholesky so that rank-deficient
/// (pure) states factor.
pub const CHOLESKY_REGULARIZATION: f64 = 1e-9;

/// Floor applied to infidelity before taking log10.
pub const LOG_INFIDELITY_FLOOR: f64 = 1e-16;

/// A `d × d` Hermitian, positive semi-definite, unit-trace matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    mat: ComplexMatrix,
}

impl DensityMatrix {
    /// Validates all three state invariants.
    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::DimensionMismatch {
                expected: mat.rows(),
                found: mat.cols(),
            });
        }
        if !mat.is_finite() {
            return Err(Error::InvalidInput("non-finite matrix entry".into()));
        }
        let dev = mat.hermitian_deviation();
        if dev > HERMITIAN_TOLERANCE {
            return Err(Error::NotHermitian(dev));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > TRACE_TOLERANCE || tr.im.abs() > TRACE_TOLERANCE {
            return Err(Error::InvalidTrace(tr.re));
        }
        let min = mat.hermitian_eigen().min();
        if min < -PSD_TOLERANCE {
            return Err(Error::NotPsd(min));
        }
        Ok(Self { mat })
    }

    /// `|ψ⟩⟨ψ| / ⟨ψ|ψ⟩`
    pub fn from_pure(psi: &[Complex64]) -> Result<Self> {
        let norm_sqr: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if !(norm_sqr > 0.0) || !norm_sqr.is_finite() {
            return Err(Error::ZeroTrace(norm_sqr));
        }
        Self::new(ComplexMatrix::outer(psi).scale(1.0 / norm_sqr).hermitian_part())
    }

    /// Diagonal state with the given probabilities.
    pub fn from_diagonal(probs: &[f64]) -> Result<Self> {
        Self::new(ComplexMatrix::diagonal(probs))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            mat: ComplexMatrix::identity(dim).scale(1.0 / dim as f64),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.mat
    }

    /// `Tr(ρ²)`
    pub fn purity(&self) -> f64 {
        self.mat.trace_product_re(&self.mat)
    }
}

/// Length-`d²` real encoding of a lower-triangular factor.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaVector {
    dim: usize,
    values: Vec<f64>,
}

impl AlphaVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let dim = (values.len() as f64).sqrt().round() as usize;
        if dim == 0 || dim * dim != values.len() {
            return Err(Error::InvalidInput(format!(
                "alpha length {} is not a nonzero perfect square",
                values.len()
            )));
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Vectors produced by [`rho_to_alpha`] have a nonnegative diagonal.
    pub fn is_canonical(&self) -> bool {
        self.values[..self.dim].iter().all(|&x| x >= 0.0)
    }

    /// Rebuilds the lower-triangular factor.
    pub fn to_lower(&self) -> ComplexMatrix {
        let d = self.dim;
        let mut l = ComplexMatrix::zeros(d, d);
        for i in 0..d {
            l[(i, i)] = Complex64::new(self.values[i], 0.0);
        }
        let mut k = d;
        for i in 1..d {
            for j in 0..i {
                l[(i, j)] = Complex64::new(self.values[k], self.values[k + 1]);
                k += 2;
            }
        }
        l
    }

    /// Inverse of [`AlphaVector::to_lower`]; the upper triangle and the
    /// diagonal's imaginary parts are ignored.
    pub fn from_lower(l: &ComplexMatrix) -> Self {
        let d = l.rows();
        let mut values = Vec::with_capacity(d * d);
        values.extend((0..d).map(|i| l[(i, i)].re));
        for i in 1..d {
            for j in 0..i {
                values.push(l[(i, j)].re);
                values.push(l[(i, j)].im);
            }
        }
        Self { dim: d, values }
    }
}

/// `ρ = L L† / Tr(L L†)`. Any finite, nonzero α maps to a valid state.
pub fn alpha_to_rho(alpha: &AlphaVector) -> Result<DensityMatrix> {
    if alpha.values.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite alpha entry".into()));
    }
    let max_abs = alpha.values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max_abs == 0.0 {
        return Err(Error::ZeroTrace(0.0));
    }
    // Rescaling is free under the trace normalization and keeps L L† away
    // from overflow and underflow. Subnormal maxima go through an exact
    // power of two first so the reciprocal stays finite.
    let boost = if max_abs < 1e-300 { 2f64.powi(1000) } else { 1.0 };
    let l = alpha.to_lower().scale(boost).scale(1.0 / (max_abs * boost));
    let llt = l.mul_adjoint_self();
    let tr = llt.trace().re;
    if tr <= 1e-300 {
        return Err(Error::ZeroTrace(tr));
    }
    let rho = llt.scale(1.0 / tr).hermitian_part();
    DensityMatrix::new(rho)
}

/// Canonical Cholesky factor of `(1 − δ)ρ + δ I/d`.
pub fn rho_to_alpha(rho: &DensityMatrix) -> Result<AlphaVector> {
    let d = rho.dim();
    let delta = CHOLESKY_REGULARIZATION;
    let mixed = rho
        .matrix()
        .scale(1.0 - delta)
        .add(&ComplexMatrix::identity(d).scale(delta / d as f64))?;
    let l = mixed.cholesky()?;
    Ok(AlphaVector::from_lower(&l))
}

/// Uhlmann fidelity `(Tr √(√ρ₁ ρ₂ √ρ₁))²`, clamped to `[0, 1]`.
///
/// Computed as `(Σ √λᵢ)²` over the eigenvalues of `√ρ₁ ρ₂ √ρ₁`. Eigenvalues
/// below `1e-14 · λ_max` are indistinguishable from the solver's rounding
/// and are dropped, which keeps near-pure inputs from gaining spurious
/// `√ε`-sized contributions.
pub fn fidelity(rho1: &DensityMatrix, rho2: &DensityMatrix) -> f64 {
    assert_eq!(rho1.dim(), rho2.dim(), "fidelity of states with different dimensions");
    let sqrt1 = psd_sqrt(rho1.matrix()).expect("density matrices are PSD within tolerance");
    let inner = sqrt1.mul(rho2.matrix()).mul(&sqrt1);
    let eig = inner.hermitian_eigen();
    let cutoff = 1e-14 * eig.max().max(0.0);
    let root_sum: f64 = eig
        .values
        .iter()
        .filter(|&&x| x > cutoff)
        .map(|x| x.sqrt())
        .sum();
    (root_sum * root_sum).clamp(0.0, 1.0)
}

/// `2 (1 − √F)`
pub fn bures_distance(rho1: &DensityMatrix, rho2: &DensityMatrix) -> f64 {
    bures_from_fidelity(fidelity(rho1, rho2))
}

pub fn bures_from_fidelity(f: f64) -> f64 {
    2.0 * (1.0 - f.clamp(0.0, 1.0).sqrt())
}

/// `arccos √F`, in `[0, π/2]`.
pub fn angle_metric(rho1: &DensityMatrix, rho2: &DensityMatrix) -> f64 {
    angle_from_fidelity(fidelity(rho1, rho2))
}

pub fn angle_from_fidelity(f: f64) -> f64 {
    f.clamp(0.0, 1.0).sqrt().acos()
}

pub fn infidelity(rho1: &DensityMatrix, rho2: &DensityMatrix) -> f64 {
    1.0 - fidelity(rho1, rho2)
}

pub fn log_infidelity(rho1: &DensityMatrix, rho2: &DensityMatrix) -> f64 {
    log_infidelity_from_fidelity(fidelity(rho1, rho2))
}

/// `log10(max(1 − F, 1e-16))`
pub fn log_infidelity_from_fidelity(f: f64) -> f64 {
    (1.0 - f).max(LOG_INFIDELITY_FLOOR).log10()
}

impl ComplexMatrix {
    /// `A A†`, exactly Hermitian.
    pub(crate) fn mul_adjoint_self(&self) -> ComplexMatrix {
        let n = self.rows();
        let mut out = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = Complex64::new(0.0, 0.0);
                for k in 0..self.cols() {
                    s += self[(i, k)] * self[(j, k)].conj();
                }
                out[(i, j)] = s;
                out[(j, i)] = s.conj();
            }
            out[(i, i)].im = 0.0;
        }
        out
    }
}
