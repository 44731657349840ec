//! Seeded randomness and random-state generators.
//!
//! Every random draw in the workspace comes from ChaCha8 (`rand_chacha`), a
//! counter-based generator whose output stream is fixed by a 64-bit seed and
//! a 64-bit stream id. Distinct consumers of the same user seed use distinct
//! [`Stream`] ids, so they never share a keystream.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::linalg::{ComplexMatrix, ZERO};
use crate::state::DensityMatrix;

/// Stream ids for [`rng`]. The numeric values are part of the reproducibility
/// contract and must not change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Random state of one dataset sample (seed = base seed + sample index).
    State = 0,
    /// Multinomial frequency sampling.
    Sampling = 1,
    /// Random square-root-measurement detectors of a dataset.
    Detectors = 2,
    /// Model weight initialization.
    Init = 3,
    /// Per-epoch shuffling of training samples.
    Shuffle = 4,
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream as u64);
    r
}

/// Standard complex normal with independent `N(0,1)` real and imaginary parts.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im)
}

/// `d × d` Ginibre matrix, entries filled row-major.
pub fn ginibre<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ComplexMatrix {
    ComplexMatrix::from_fn(dim, dim, |_, _| complex_normal(rng))
}

/// Haar-distributed unitary: QR of a Ginibre matrix with the phases of
/// `R`'s diagonal moved into `Q`. Gram–Schmidt (applied twice per column)
/// yields a real positive `R` diagonal directly, which is that correction.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ComplexMatrix {
    let g = ginibre(dim, rng);
    let mut cols: Vec<Vec<Complex64>> = (0..dim)
        .map(|j| (0..dim).map(|i| g[(i, j)]).collect())
        .collect();
    for j in 0..dim {
        for _ in 0..2 {
            for k in 0..j {
                let proj: Complex64 = (0..dim).map(|i| cols[k][i].conj() * cols[j][i]).sum();
                for i in 0..dim {
                    let qk = cols[k][i];
                    cols[j][i] -= proj * qk;
                }
            }
        }
        let norm = cols[j].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for z in cols[j].iter_mut() {
            *z /= norm;
        }
    }
    ComplexMatrix::from_fn(dim, dim, |i, j| cols[j][i])
}

/// Pure state `U|0⟩⟨0|U†` for a given unitary.
pub fn pure_state_from_unitary(u: &ComplexMatrix) -> Result<DensityMatrix> {
    let psi: Vec<Complex64> = (0..u.rows()).map(|i| u[(i, 0)]).collect();
    DensityMatrix::from_pure(&psi)
}

/// Haar-random pure state vector (first column of a Haar unitary).
pub fn haar_state_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<Complex64> {
    let u = haar_unitary(dim, rng);
    (0..dim).map(|i| u[(i, 0)]).collect()
}

pub fn haar_pure_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    pure_state_from_unitary(&haar_unitary(dim, rng)).expect("Haar column is a unit vector")
}

/// Hilbert–Schmidt random mixed state `G G† / Tr(G G†)`.
pub fn ginibre_mixed_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    let g = ginibre(dim, rng);
    let ggt = g.mul_adjoint_self();
    let tr = ggt.trace().re;
    DensityMatrix::new(ggt.scale(1.0 / tr).hermitian_part()).expect("G G† is a valid state")
}

/// Basis vector `|k⟩` of dimension `dim`.
pub fn basis_vector(dim: usize, k: usize) -> Vec<Complex64> {
    let mut v = vec![ZERO; dim];
    v[k] = Complex64::new(1.0, 0.0);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_unitary_is_unitary() {
        let mut r = rng(7, Stream::State);
        for d in [2, 4, 8, 16] {
            let u = haar_unitary(d, &mut r);
            let uu = u.matmul(&u.adjoint()).unwrap();
            assert!(uu.max_abs_diff(&ComplexMatrix::identity(d)) <= 1e-10);
        }
    }

    #[test]
    fn identity_unitary_gives_ground_state() {
        let rho = pure_state_from_unitary(&ComplexMatrix::identity(4)).unwrap();
        let mut expected = vec![0.0; 4];
        expected[0] = 1.0;
        assert_eq!(rho.matrix(), &ComplexMatrix::diagonal(&expected));
    }

    #[test]
    fn pure_states_have_unit_purity() {
        let mut r = rng(1, Stream::State);
        for _ in 0..100 {
            let rho = haar_pure_state(4, &mut r);
            assert!((rho.purity() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn streams_differ() {
        let a: u64 = rng(5, Stream::State).random();
        let b: u64 = rng(5, Stream::Sampling).random();
        let c: u64 = rng(5, Stream::State).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
