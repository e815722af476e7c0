//! Seeded random instances for validation suites and tests.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::pauli::{Pauli, PauliString};
use crate::CMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re, im)
    })
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, d: usize) -> CMatrix {
    let a = random_matrix(rng, d, d);
    (&a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

pub fn random_unitary(rng: &mut ChaCha8Rng, r: usize) -> CMatrix {
    random_matrix(rng, r, r).qr().q()
}

pub fn random_string(rng: &mut ChaCha8Rng, n: usize) -> PauliString {
    PauliString::new((0..n).map(|_| Pauli::ALL[rng.random_range(0..4)]).collect())
        .expect("qubit count within MAX_QUBITS")
}
