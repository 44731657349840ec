//! Dense complex matrices and the handful of factorizations the rest of the
//! crate needs: Hermitian eigendecomposition (cyclic Jacobi), Cholesky, and
//! functions of Hermitian matrices built on top of them.
//!
//! Sizes here are tiny (d ≤ 16 for states, a few hundred for LRE normal
//! equations), so everything is plain row-major `Vec<Complex64>`.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Row-major complex matrix. `Complex64` is `repr(C)`, so `data` has the
/// interleaved `(re, im)` layout used by the on-disk formats.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Real diagonal matrix.
    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = Complex64::new(v, 0.0);
        }
        m
    }

    /// `|v⟩⟨v|`
    pub fn outer(v: &[Complex64]) -> Self {
        Self::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: rhs.rows,
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == ZERO {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Matrix product for operands whose shapes are known to agree.
    pub(crate) fn mul(&self, rhs: &Self) -> Self {
        self.matmul(rhs).expect("inner dimensions agree")
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, |a, b| a - b)
    }

    fn zip_with(&self, rhs: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                found: rhs.rows * rhs.cols,
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `Re Tr(self · rhs)` without forming the product.
    pub fn trace_product_re(&self, rhs: &Self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                let b = rhs[(j, i)];
                acc += a.re * b.re - a.im * b.im;
            }
        }
        acc
    }

    pub fn kron(&self, rhs: &Self) -> Self {
        Self::from_fn(self.rows * rhs.rows, self.cols * rhs.cols, |i, j| {
            self[(i / rhs.rows, j / rhs.cols)] * rhs[(i % rhs.rows, j % rhs.cols)]
        })
    }

    /// Largest elementwise modulus of `self - rhs`.
    pub fn max_abs_diff(&self, rhs: &Self) -> f64 {
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `‖A − A†‖_max`
    pub fn hermitian_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                dev = dev.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        dev
    }

    /// `(A + A†) / 2` with an exactly real diagonal.
    pub fn hermitian_part(&self) -> Self {
        let mut out = Self::from_fn(self.rows, self.cols, |i, j| {
            (self[(i, j)] + self[(j, i)].conj()) * 0.5
        });
        for i in 0..self.rows {
            out[(i, i)].im = 0.0;
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Eigendecomposition of a Hermitian matrix; only the lower and upper
    /// triangles' Hermitian part is used.
    pub fn hermitian_eigen(&self) -> HermitianEigen {
        HermitianEigen::new(self)
    }

    /// Lower-triangular `L` with real positive diagonal such that `L L† = A`.
    pub fn cholesky(&self) -> Result<Self> {
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut diag = self[(j, j)].re;
            for k in 0..j {
                diag -= l[(j, k)].norm_sqr();
            }
            if !(diag > 0.0) {
                return Err(Error::NotPositive(diag));
            }
            let ljj = diag.sqrt();
            l[(j, j)] = Complex64::new(ljj, 0.0);
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(l)
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigenvalues (ascending) and the unitary whose columns are the matching
/// eigenvectors.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

const JACOBI_MAX_SWEEPS: usize = 60;

impl HermitianEigen {
    /// Cyclic Jacobi. Each rotation first removes the phase of `a[p][q]`,
    /// then applies the real symmetric 2×2 rotation that zeroes it.
    fn new(m: &ComplexMatrix) -> Self {
        assert!(m.is_square(), "eigendecomposition of a non-square matrix");
        let n = m.rows;
        let mut a = m.hermitian_part();
        let mut v = ComplexMatrix::identity(n);
        let scale = a.frobenius_norm();

        if scale > 0.0 {
            for _ in 0..JACOBI_MAX_SWEEPS {
                let mut off = 0.0;
                for p in 0..n {
                    for q in p + 1..n {
                        off += a[(p, q)].norm_sqr();
                    }
                }
                if off.sqrt() <= f64::EPSILON * n as f64 * scale {
                    break;
                }
                for p in 0..n {
                    for q in p + 1..n {
                        let z = a[(p, q)];
                        let r = z.norm();
                        if r <= 1e-300 || r <= 1e-20 * scale {
                            continue;
                        }
                        let phase = z / r;
                        let app = a[(p, p)].re;
                        let aqq = a[(q, q)].re;
                        let theta = 0.5 * (2.0 * r).atan2(aqq - app);
                        let (s, c) = theta.sin_cos();
                        // J = [[c, s], [-s e^{-iφ}, c e^{-iφ}]] on (p, q).
                        let jqp = -phase.conj() * s;
                        let jqq = phase.conj() * c;
                        for k in 0..n {
                            let akp = a[(k, p)];
                            let akq = a[(k, q)];
                            a[(k, p)] = akp * c + akq * jqp;
                            a[(k, q)] = akp * s + akq * jqq;
                        }
                        for k in 0..n {
                            let apk = a[(p, k)];
                            let aqk = a[(q, k)];
                            a[(p, k)] = apk * c + aqk * jqp.conj();
                            a[(q, k)] = apk * s + aqk * jqq.conj();
                        }
                        a[(p, q)] = ZERO;
                        a[(q, p)] = ZERO;
                        a[(p, p)].im = 0.0;
                        a[(q, q)].im = 0.0;
                        for k in 0..n {
                            let vkp = v[(k, p)];
                            let vkq = v[(k, q)];
                            v[(k, p)] = vkp * c + vkq * jqp;
                            v[(k, q)] = vkp * s + vkq * jqq;
                        }
                    }
                }
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
        let values = order.iter().map(|&i| a[(i, i)].re).collect();
        let vectors = ComplexMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
        Self { values, vectors }
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `V diag(f(λ)) V†`
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let mapped: Vec<f64> = self.values.iter().map(|&x| f(x)).collect();
        self.reconstruct_from_values(&mapped)
    }

    /// `V diag(values) V†`, with `values` in the same (ascending) order as
    /// the eigenvalues.
    pub fn reconstruct_from_values(&self, mapped: &[f64]) -> ComplexMatrix {
        let n = self.values.len();
        assert_eq!(mapped.len(), n, "one value per eigenvector");
        let mut out = ComplexMatrix::zeros(n, n);
        for (k, &lambda) in mapped.iter().enumerate() {
            if lambda == 0.0 {
                continue;
            }
            for i in 0..n {
                let vik = self.vectors[(i, k)] * lambda;
                for j in 0..n {
                    out[(i, j)] += vik * self.vectors[(j, k)].conj();
                }
            }
        }
        out.hermitian_part()
    }
}

/// Eigenvalues in `[-tol, 0)` count as rounding noise; anything lower is
/// reported.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Square root of a positive semi-definite Hermitian matrix.
pub fn psd_sqrt(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = m.hermitian_eigen();
    if eig.min() < -PSD_TOLERANCE {
        return Err(Error::NotPsd(eig.min()));
    }
    Ok(eig.reconstruct_with(|x| x.max(0.0).sqrt()))
}

/// Inverse square root of a positive definite Hermitian matrix. Fails when the
/// smallest eigenvalue is at or below `min_eigenvalue`.
pub fn inverse_sqrt(m: &ComplexMatrix, min_eigenvalue: f64) -> Result<ComplexMatrix> {
    let eig = m.hermitian_eigen();
    if eig.min() <= min_eigenvalue {
        return Err(Error::SingularGram(eig.min()));
    }
    Ok(eig.reconstruct_with(|x| 1.0 / x.sqrt()))
}
