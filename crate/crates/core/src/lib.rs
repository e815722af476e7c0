//! Low-rank quantum state tomography distributed over simulated workers.
//!
//! A density matrix `ρ = U U^†` is recovered from Pauli expectation values by
//! gradient descent on the factor `U`. Each worker holds its own shard of
//! measurements, takes `h` local stochastic steps, and the workers' factors are
//! averaged at every synchronization round.
//!
//! Modules, bottom-up:
//! - [`pauli`]: matrix-free Pauli strings and the sensing map.
//! - [`states`]: target factors (GHZ, random) and the reconstruction error.
//! - [`linalg`]: Procrustes distance and top-`r` PSD factorization.
//! - [`data`]: synthetic shot-noise measurements and worker shards.
//! - [`sfgd`]: objective, gradients, spectral initialization and the optimizers.
//! - [`oracle`]: dense `d × d` reference implementations for validation.
//! - [`experiment`]: sweeps and file outputs used by the CLI.
//! - [`validate`]: self-checks of the fast kernels against [`oracle`] and closed forms.

pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod oracle;
pub mod pauli;
pub mod random;
pub mod sfgd;
pub mod states;
pub mod validate;

/// Dense complex matrix, column-major.
pub type CMatrix = nalgebra::DMatrix<num_complex::Complex64>;

pub use error::{Error, Result};
pub use pauli::{PauliString, StateVector};
pub use states::DensityFactor;
