//! Quantum-state primitives, measurement simulation, dataset generation and
//! linear-regression tomography.

pub mod dataset;
pub mod error;
pub mod linalg;
pub mod lre;
pub mod povm;
pub mod random;
pub mod state;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, HermitianEigen};
pub use povm::{Copies, Detector, FrequencyTable, MeasurementSet};
pub use state::{AlphaVector, DensityMatrix};
